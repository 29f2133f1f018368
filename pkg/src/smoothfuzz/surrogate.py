"""Feed-forward surrogate of a program's edge coverage.

One hidden layer (rectifier, or identity for the linear ablation) and a
logistic output per merged label. Inputs are bytes scaled to ``[0, 1]``.
Training minimises mean binary cross-entropy with Adam.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_byte_matrix, as_label_matrix

CLAMP = 30.0
EPS = 1e-7
ACTIVATIONS = ("relu", "identity")

CHECKPOINT_MAGIC = b"SFNNCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIqB")


class TrainingDiverged(FloatingPointError):
    """Loss went non-finite during training."""


@dataclass
class NNModel:
    w1: np.ndarray  # (hidden_dim, m)
    b1: np.ndarray
    w2: np.ndarray  # (label_count, hidden_dim)
    b2: np.ndarray
    activation: str = "relu"
    seed: int = 0

    @property
    def input_len(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def label_count(self) -> int:
        return self.w2.shape[0]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "NNModel":
        return NNModel(*(p.copy() for p in self.params()), self.activation, self.seed)


@dataclass
class TrainingSet:
    """Index-aligned inputs and label vectors with a 5:1 train/test split."""

    inputs: np.ndarray  # (n, m) uint8
    labels: np.ndarray  # (n, label_count) uint8
    train_idx: np.ndarray
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels must be index-aligned")

    @classmethod
    def split(cls, inputs, labels, rng=None, test_ratio: int = 6) -> "TrainingSet":
        """Shuffle and hold out ``n // test_ratio`` samples for testing."""
        X = as_byte_matrix(inputs)
        Y = as_label_matrix(labels, n_samples=len(X))
        n = len(X)
        order = np.arange(n) if rng is None else np.random.default_rng(rng).permutation(n)
        n_test = n // test_ratio
        return cls(X, Y, np.sort(order[n_test:]), np.sort(order[:n_test]))

    def __len__(self):
        return len(self.inputs)

    @property
    def X_train(self):
        return self.inputs[self.train_idx]

    @property
    def Y_train(self):
        return self.labels[self.train_idx]

    @property
    def X_test(self):
        return self.inputs[self.test_idx]

    @property
    def Y_test(self):
        return self.labels[self.test_idx]


def normalize(X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) / 255.0


def init_model(m: int, label_count: int, hidden_dim: int = 4096, seed: int = 0,
               activation: str = "relu") -> NNModel:
    if min(m, label_count, hidden_dim) < 1:
        raise ValueError("model dimensions must all be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_out, fan_in))

    w1 = glorot(hidden_dim, m)
    w2 = glorot(label_count, hidden_dim)
    return NNModel(w1, np.zeros(hidden_dim), w2, np.zeros(label_count), activation, seed)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _forward(model: NNModel, x: np.ndarray):
    """``x`` is already normalized, shape (n, m). Returns cache and output."""
    pre = x @ model.w1.T + model.b1
    hidden = np.maximum(pre, 0.0) if model.activation == "relu" else pre
    logits = hidden @ model.w2.T + model.b2
    clamped = np.clip(logits, -CLAMP, CLAMP)
    return (pre, hidden, logits), _sigmoid(clamped)


def bce(y_true, y_prob) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    return float(-np.mean(y_true * np.log(y_prob + EPS)
                          + (1 - y_true) * np.log(1 - y_prob + EPS)))


def forward_float(model: NNModel, x: np.ndarray) -> np.ndarray:
    """Output probabilities for already-normalized float inputs."""
    return _forward(model, np.atleast_2d(np.asarray(x, dtype=np.float64)))[1]


def predict(model: NNModel, inp) -> np.ndarray:
    X = as_byte_matrix(inp, m=model.input_len)
    out = forward_float(model, normalize(X))
    return out[0] if _is_single(inp) else out


def _is_single(inp) -> bool:
    if isinstance(inp, (bytes, bytearray)) or hasattr(inp, "logical_len"):
        return True
    return isinstance(inp, np.ndarray) and inp.ndim == 1


def _loss_grads(model: NNModel, x, y):
    (pre, hidden, logits), p = _forward(model, x)
    n, L = y.shape
    # d(mean BCE)/d logit, zeroed where the clamp is active; the EPS
    # term in the log is ignored here
    dz = (p - y) / (n * L)
    dz = dz * (np.abs(logits) < CLAMP)
    gw2 = dz.T @ hidden
    gb2 = dz.sum(axis=0)
    dh = dz @ model.w2
    if model.activation == "relu":
        dh = dh * (pre > 0)
    gw1 = dh.T @ x
    gb1 = dh.sum(axis=0)
    return [gw1, gb1, gw2, gb2]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._buf = [np.empty_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """p -= lr * m_hat / (sqrt(v_hat) + eps), computed in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        root_c2 = np.sqrt(1 - b2 ** self.t)
        for p, g, m, v, buf in zip(params, grads, self.m, self.v, self._buf):
            m *= b1
            np.multiply(g, 1 - b1, out=buf)
            m += buf
            v *= b2
            np.multiply(g, g, out=buf)
            buf *= 1 - b2
            v += buf
            np.sqrt(v, out=buf)
            buf /= root_c2
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr / c1
            p -= buf


def train(model: NNModel, data: TrainingSet, epochs: int = 50, batch_size: int = 32,
          learning_rate: float = 1e-3, shuffle_seed: int | None = None):
    """Train in place. Returns ``(model, trace)`` where ``trace[0]`` is the
    loss before training and ``trace[e]`` the full train-split loss after
    epoch ``e``."""
    X = normalize(data.X_train)
    Y = np.asarray(data.Y_train, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("training split is empty")
    if Y.shape[1] != model.label_count or X.shape[1] != model.input_len:
        raise ValueError(
            f"data shape {X.shape}/{Y.shape} does not fit model "
            f"({model.input_len} -> {model.label_count})"
        )
    rng = np.random.default_rng(model.seed if shuffle_seed is None else shuffle_seed)
    # A w1 column whose byte is zero in every training input gets zero
    # gradient, so its Adam moments stay 0 and it never moves. Train on the
    # live columns only and write them back; b1, w2, b2 are shared.
    live = np.flatnonzero(X.any(axis=0))
    sub = model
    if live.size < model.input_len:
        sub = NNModel(model.w1[:, live], model.b1, model.w2, model.b2, model.activation, model.seed)
        X = X[:, live]
    opt = Adam(sub.params(), lr=learning_rate)
    trace = [bce(Y, _forward(sub, X)[1])]
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), batch_size):
                idx = order[start:start + batch_size]
                opt.step(sub.params(), _loss_grads(sub, X[idx], Y[idx]))
            loss = bce(Y, _forward(sub, X)[1])
            if not np.isfinite(loss) or not all(np.isfinite(p).all() for p in sub.params()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1} (last finite {trace[-1]:.4g}, "
                    f"lr={learning_rate}); lower the learning rate"
                )
            trace.append(loss)
    finally:
        if sub is not model:
            model.w1[:, live] = sub.w1
    return model, trace


def input_gradient(model: NNModel, inp, neuron: int) -> np.ndarray:
    """Gradient of output ``neuron`` w.r.t. each normalized input byte.

    ``inp`` may be a ByteInput/bytes/uint8 vector, or a float vector that is
    taken as already normalized.
    """
    if not 0 <= neuron < model.label_count:
        raise IndexError(f"neuron {neuron} outside [0, {model.label_count})")
    arr = np.asarray(inp.array if hasattr(inp, "array") else
                     (np.frombuffer(bytes(inp), dtype=np.uint8)
                      if isinstance(inp, (bytes, bytearray)) else inp))
    if arr.ndim != 1 or arr.size != model.input_len:
        raise ValueError(f"input length {arr.size} != model input {model.input_len}")
    x = arr.astype(np.float64) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64)
    pre = model.w1 @ x + model.b1
    hidden = np.maximum(pre, 0.0) if model.activation == "relu" else pre
    logit = model.w2[neuron] @ hidden + model.b2[neuron]
    if abs(logit) >= CLAMP:
        return np.zeros(model.input_len)
    p = _sigmoid(logit)
    dh = model.w2[neuron] * (p * (1 - p))
    if model.activation == "relu":
        dh = dh * (pre > 0)
    return dh @ model.w1


def evaluate(model: NNModel, data: TrainingSet) -> dict:
    """Bitwise accuracy and mean loss on the test split (0.5 predicts 0)."""
    if len(data.test_idx) == 0:
        raise ValueError("test split is empty")
    p = forward_float(model, normalize(data.X_test))
    Y = data.Y_test
    acc = float(np.mean((p > 0.5) == (Y > 0)))
    return {"bitwise_accuracy": acc, "mean_loss": bce(Y, p)}


def save_checkpoint(model: NNModel, path):
    path = Path(path)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.input_len,
                          model.hidden_dim, model.label_count, model.seed,
                          ACTIVATIONS.index(model.activation))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> NNModel:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise ValueError("checkpoint truncated")
    magic, version, m, hidden, labels, seed, act = _HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    shapes = [(hidden, m), (hidden,), (labels, hidden), (labels,)]
    arrays, off = [], _HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        chunk = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
        arrays.append(chunk.astype(np.float64).reshape(shape))
        off += 4 * count
    if off != len(buf):
        raise ValueError("checkpoint size does not match its header")
    return NNModel(*arrays, activation=ACTIVATIONS[act], seed=seed)


class CoverageSurrogate(ClassifierMixin, BaseEstimator):
    """scikit-learn style wrapper: ``fit(X, Y)`` on byte inputs and label
    vectors, then ``predict_proba`` / ``predict`` / ``input_gradient``.

    ``score`` reports bitwise accuracy over every (sample, label) bit.
    """

    def __init__(self, hidden_dim=4096, epochs=50, batch_size=32, learning_rate=1e-3,
                 activation="relu", random_state=0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.activation = activation
        self.random_state = random_state

    def fit(self, X, Y):
        X = as_byte_matrix(X)
        Y = as_label_matrix(Y, n_samples=len(X))
        model = init_model(X.shape[1], Y.shape[1], self.hidden_dim,
                           seed=self.random_state, activation=self.activation)
        data = TrainingSet(X, Y, np.arange(len(X)))
        self.model_, self.loss_curve_ = train(model, data, self.epochs,
                                              self.batch_size, self.learning_rate)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return forward_float(self.model_, normalize(as_byte_matrix(X, m=self.n_features_in_)))

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.uint8)

    def score(self, X, Y, sample_weight=None):
        Y = as_label_matrix(Y)
        return float(np.mean(self.predict(X) == (Y > 0)))

    def input_gradient(self, x, neuron):
        check_is_fitted(self, "model_")
        return input_gradient(self.model_, x, neuron)
