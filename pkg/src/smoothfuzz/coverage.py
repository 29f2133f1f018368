"""Byte inputs, edge bitmaps and training-label reduction.

Edges are explicit integer ids in ``[0, edge_count)``. A bitmap file holds
exactly ``edge_count`` bytes; byte ``i`` is nonzero iff edge ``i`` was covered.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_EDGE_COUNT = 65536
DEFAULT_INPUT_LEN = 10240


class OversizeInputError(ValueError):
    """Raised when a raw input is longer than the model input size."""


class EdgeCountMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ByteInput:
    """A program input padded with null bytes to a fixed length."""

    data: bytes
    logical_len: int

    def __post_init__(self):
        if not 0 <= self.logical_len <= len(self.data):
            raise ValueError(
                f"logical_len {self.logical_len} outside [0, {len(self.data)}]"
            )

    def __len__(self):
        return len(self.data)

    @property
    def array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8)

    @property
    def raw(self) -> bytes:
        """The meaningful prefix, without padding."""
        return self.data[: self.logical_len]

    @classmethod
    def from_array(cls, arr: np.ndarray, logical_len: int) -> "ByteInput":
        return cls(np.asarray(arr, dtype=np.uint8).tobytes(), logical_len)


def pad_input(raw, m: int) -> ByteInput:
    """Pad ``raw`` with null bytes up to length ``m``.

    Inputs longer than ``m`` are rejected, never truncated.
    """
    if isinstance(raw, ByteInput):
        raw = raw.raw
    raw = bytes(raw)
    if len(raw) > m:
        raise OversizeInputError(f"input of {len(raw)} bytes exceeds threshold {m}")
    return ByteInput(raw + bytes(m - len(raw)), len(raw))


class EdgeBitmap:
    """Immutable set of covered edges over a fixed edge id space."""

    __slots__ = ("_covered",)

    def __init__(self, covered):
        arr = np.array(covered, dtype=bool, copy=True).ravel()
        arr.setflags(write=False)
        self._covered = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "EdgeBitmap":
        # takes ownership of a freshly built bool array, no copy
        arr.setflags(write=False)
        obj = cls.__new__(cls)
        obj._covered = arr
        return obj

    @classmethod
    def empty(cls, edge_count: int) -> "EdgeBitmap":
        return cls(np.zeros(edge_count, dtype=bool))

    @classmethod
    def from_edges(cls, edges: Iterable[int], edge_count: int) -> "EdgeBitmap":
        arr = np.zeros(edge_count, dtype=bool)
        edges = list(edges)
        if edges:
            if min(edges) < 0 or max(edges) >= edge_count:
                raise ValueError(f"edge id outside [0, {edge_count})")
            arr[edges] = True
        return cls._wrap(arr)

    @classmethod
    def from_bytes(cls, buf: bytes, edge_count: int | None = None) -> "EdgeBitmap":
        if edge_count is not None and len(buf) != edge_count:
            raise EdgeCountMismatch(
                f"bitmap file has {len(buf)} bytes, expected {edge_count}"
            )
        return cls(np.frombuffer(buf, dtype=np.uint8) != 0)

    @property
    def covered(self) -> np.ndarray:
        return self._covered

    @property
    def edge_count(self) -> int:
        return self._covered.size

    def edges(self) -> list[int]:
        return np.flatnonzero(self._covered).tolist()

    def count(self) -> int:
        return int(self._covered.sum())

    def to_bytes(self) -> bytes:
        return self._covered.astype(np.uint8).tobytes()

    def union(self, other: "EdgeBitmap") -> "EdgeBitmap":
        _check_same(self, other)
        return EdgeBitmap._wrap(self._covered | other._covered)

    def __contains__(self, edge: int) -> bool:
        return bool(self._covered[edge])

    def __eq__(self, other):
        if not isinstance(other, EdgeBitmap):
            return NotImplemented
        return self.edge_count == other.edge_count and bool(
            np.array_equal(self._covered, other._covered)
        )

    def __hash__(self):
        return hash(self._covered.tobytes())

    def __repr__(self):
        shown = self.edges()
        if len(shown) > 8:
            shown = shown[:8] + ["..."]
        return f"EdgeBitmap(edge_count={self.edge_count}, covered={shown})"


def _check_same(a: EdgeBitmap, b: EdgeBitmap):
    if a.edge_count != b.edge_count:
        raise EdgeCountMismatch(f"edge_count {a.edge_count} != {b.edge_count}")


def read_bitmap(path, edge_count: int | None = None) -> EdgeBitmap:
    return EdgeBitmap.from_bytes(Path(path).read_bytes(), edge_count)


def write_bitmap(path, bitmap: EdgeBitmap):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bitmap.to_bytes())
    os.replace(tmp, path)


@dataclass(frozen=True)
class LabelReduction:
    """Merges raw edges that co-occur identically into shared labels.

    Labels are numbered by ascending representative (lowest raw edge id of
    the merged group), so the mapping does not depend on sample order.
    """

    edge_count: int
    raw_to_label: dict[int, int]
    representative: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def label_count(self) -> int:
        return len(self.representative)

    @property
    def representative_array(self) -> np.ndarray:
        return np.asarray(self.representative, dtype=np.int64)


def bitmap_matrix(bitmaps: Sequence[EdgeBitmap]) -> np.ndarray:
    """Stack bitmaps into an ``(n_samples, edge_count)`` bool matrix."""
    if not len(bitmaps):
        raise ValueError("at least one bitmap is required")
    n = bitmaps[0].edge_count
    for b in bitmaps:
        if b.edge_count != n:
            raise EdgeCountMismatch(f"edge_count {b.edge_count} != {n}")
    return np.stack([b.covered for b in bitmaps])


def build_reduction(bitmaps) -> LabelReduction:
    """Partition ever-covered raw edges by identical coverage column."""
    mat = bitmaps if isinstance(bitmaps, np.ndarray) else bitmap_matrix(bitmaps)
    mat = np.asarray(mat, dtype=bool)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError("at least one bitmap is required")
    edge_count = mat.shape[1]
    live = np.flatnonzero(mat.any(axis=0))
    if live.size == 0:
        return LabelReduction(edge_count, {}, (), ())
    # one packed byte-string per column; identical columns share a key
    packed = np.packbits(mat[:, live], axis=0).T
    _, first, inverse = np.unique(
        packed, axis=0, return_index=True, return_inverse=True
    )
    inverse = inverse.ravel()
    # np.unique sorts by content; renumber by lowest member edge instead
    order = np.argsort(first, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.size)
    labels = relabel[inverse]
    groups: list[list[int]] = [[] for _ in range(order.size)]
    for edge, lab in zip(live.tolist(), labels.tolist()):
        groups[lab].append(edge)
    raw_to_label = dict(zip(live.tolist(), labels.tolist()))
    rep = tuple(g[0] for g in groups)
    return LabelReduction(edge_count, raw_to_label, rep, tuple(map(tuple, groups)))


def reduce(bitmap: EdgeBitmap, r: LabelReduction) -> np.ndarray:
    """Label vector for one bitmap: bit set iff the representative is covered."""
    if bitmap.edge_count != r.edge_count:
        raise EdgeCountMismatch(
            f"bitmap edge_count {bitmap.edge_count} != reduction {r.edge_count}"
        )
    return bitmap.covered[r.representative_array].astype(np.uint8)


def reduce_matrix(mat: np.ndarray, r: LabelReduction) -> np.ndarray:
    mat = np.asarray(mat, dtype=bool)
    if mat.shape[1] != r.edge_count:
        raise EdgeCountMismatch(
            f"bitmap edge_count {mat.shape[1]} != reduction {r.edge_count}"
        )
    return mat[:, r.representative_array].astype(np.uint8)


def has_new_coverage(bitmap: EdgeBitmap, global_cov: EdgeBitmap):
    """Return ``(is_new, updated_global)``."""
    _check_same(bitmap, global_cov)
    fresh = bitmap.covered & ~global_cov.covered
    if not fresh.any():
        return False, global_cov
    return True, EdgeBitmap._wrap(global_cov.covered | bitmap.covered)
