"""Input coercion shared by the estimators and the fuzz loop."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def as_byte_matrix(X, m: int | None = None) -> np.ndarray:
    """Coerce ByteInputs, bytes, or an integer array into an (n, m) uint8 matrix."""
    if isinstance(X, (bytes, bytearray)) or hasattr(X, "logical_len"):
        X = [X]
    if isinstance(X, np.ndarray) and X.ndim == 1:
        X = X[None, :]
    if not isinstance(X, np.ndarray):
        rows = [np.frombuffer(x.data if hasattr(x, "logical_len") else bytes(x), dtype=np.uint8)
                if isinstance(x, (bytes, bytearray)) or hasattr(x, "logical_len")
                else np.asarray(x) for x in X]
        if not rows:
            raise ValueError("no inputs given")
        if len({r.size for r in rows}) != 1:
            raise ValueError("inputs must share one padded length")
        X = np.stack(rows)
    if X.dtype != np.uint8:
        X = check_array(X, dtype=None, ensure_all_finite=True)
        if X.min(initial=0) < 0 or X.max(initial=0) > 255:
            raise ValueError("byte values must lie in [0, 255]")
        X = X.astype(np.uint8)
    if m is not None and X.shape[1] != m:
        raise ValueError(f"input length {X.shape[1]} != expected {m}")
    return X


def as_label_matrix(Y, n_samples: int | None = None) -> np.ndarray:
    Y = check_array(np.asarray(Y), dtype=None, ensure_min_features=0,
                    ensure_all_finite=True)
    if Y.size and not np.isin(Y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if n_samples is not None and len(Y) != n_samples:
        raise ValueError(f"{len(Y)} label rows for {n_samples} inputs")
    return Y.astype(np.uint8)
