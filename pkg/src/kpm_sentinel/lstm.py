"""Single-layer LSTM binary classifier in NumPy (float64).

Gate blocks are stacked along the last axis in the order input, forget,
cell, output, so ``W_x[:, H:2H]`` is the forget-gate input matrix.
Training minimizes mean binary cross-entropy with Adam and early stopping
on a validation set.
"""
from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

GATES = ("input", "forget", "cell", "output")
PROB_EPS = 1e-12

MAGIC = b"KPMLSTM1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIII")


class ModelFormatError(ValueError):
    """The model file is truncated, corrupted or not a model file."""


class ModelVersionError(ModelFormatError):
    pass


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmParams:
    W_x: np.ndarray   # (input_dim, 4H)
    W_h: np.ndarray   # (H, 4H)
    b: np.ndarray     # (4H,)
    W_out: np.ndarray  # (H, 1)
    b_out: np.ndarray  # (1,)

    NAMES = ("W_x", "W_h", "b", "W_out", "b_out")

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def copy(self) -> "LstmParams":
        return LstmParams(*(a.copy() for a in self.arrays()))

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(input matrix, recurrent matrix, bias) views for one gate."""
        k, H = GATES.index(name), self.hidden
        sl = slice(k * H, (k + 1) * H)
        return self.W_x[:, sl], self.W_h[:, sl], self.b[sl]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return forward(self, X)

    def equal(self, other: "LstmParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_model(seed: int = 0, input_dim: int = 14, hidden: int = 32) -> LstmParams:
    """Glorot-uniform input weights, orthogonal recurrent weights, forget bias 1."""
    if input_dim < 1 or hidden < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    lim = np.sqrt(6.0 / (input_dim + hidden))
    W_x = np.concatenate([rng.uniform(-lim, lim, (input_dim, hidden)) for _ in GATES], axis=1)
    W_h = np.concatenate([_orthogonal(rng, hidden) for _ in GATES], axis=1)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    lim_out = np.sqrt(6.0 / (hidden + 1))
    W_out = rng.uniform(-lim_out, lim_out, (hidden, 1))
    return LstmParams(W_x, W_h, b, W_out, np.zeros(1))


def zeros_like(params: LstmParams) -> LstmParams:
    return LstmParams(*(np.zeros_like(a) for a in params.arrays()))


@dataclass
class Prediction:
    probability: float
    label: int

    @classmethod
    def from_probability(cls, p: float, threshold: float = 0.5) -> "Prediction":
        return cls(float(p), int(p >= threshold))


def _as_batch(X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (W, F) or (n, W, F) input, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("window contains non-finite values")
    return X, single


def _run(params: LstmParams, X: np.ndarray, keep: bool):
    n, T, _ = X.shape
    H = params.hidden
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    trace = []
    for t in range(T):
        z = X[:, t] @ params.W_x + h @ params.W_h + params.b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            trace.append((h_prev, c_prev, i, f, g, o, tc))
    logit = (h @ params.W_out)[:, 0] + params.b_out[0]
    return logit, h, trace


def forward_logit(params: LstmParams, X) -> np.ndarray:
    X, single = _as_batch(X)
    logit = _run(params, X, keep=False)[0]
    return logit[0] if single else logit


def forward(params: LstmParams, X) -> np.ndarray | float:
    """Class-1 probability for one window (W, F) or a batch (n, W, F)."""
    X, single = _as_batch(X)
    # keep probabilities strictly inside (0, 1) even for saturated logits
    p = np.clip(sigmoid(_run(params, X, keep=False)[0]), PROB_EPS, 1.0 - PROB_EPS)
    return float(p[0]) if single else p


def predict(params: LstmParams, window, threshold: float = 0.5) -> Prediction:
    return Prediction.from_probability(forward(params, window), threshold)


def bce_loss(probabilities, labels, positive_weight: float = 1.0) -> float:
    """Mean of -[w*y*log p + (1-y)*log(1-p)] with p clipped to [eps, 1-eps]."""
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-(positive_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def loss_and_grads(params: LstmParams, X, y, positive_weight: float = 1.0
                   ) -> tuple[float, LstmParams]:
    """Mean BCE over the batch and its exact gradient via backpropagation through time."""
    X, _ = _as_batch(X)
    y = np.asarray(y, dtype=float)
    n = len(X)
    H = params.hidden
    logit, h_last, trace = _run(params, X, keep=True)
    p = sigmoid(logit)
    loss = bce_loss(p, y, positive_weight)

    # d(loss)/d(logit) for sigmoid + weighted BCE
    dlogit = (positive_weight * y * (p - 1.0) + (1.0 - y) * p) / n
    g = zeros_like(params)
    g.W_out[:, 0] = h_last.T @ dlogit
    g.b_out[0] = dlogit.sum()
    dh = np.outer(dlogit, params.W_out[:, 0])
    dc = np.zeros((n, H))
    for t in range(X.shape[1] - 1, -1, -1):
        h_prev, c_prev, i, f, gg, o, tc = trace[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - gg ** 2),
            do * o * (1.0 - o),
        ], axis=1)
        g.W_x += X[:, t].T @ dz
        g.W_h += h_prev.T @ dz
        g.b += dz.sum(axis=0)
        dh = dz @ params.W_h.T
        dc = dc * f
    return loss, g


def backward(params: LstmParams, X, y, positive_weight: float = 1.0) -> LstmParams:
    return loss_and_grads(params, X, y, positive_weight)[1]


# -- optimisation --------------------------------------------------------------

@dataclass
class AdamState:
    m: LstmParams
    v: LstmParams
    step: int = 0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 3
    max_epochs: int = 30
    validation_fraction: float = 0.1
    seed: int = 0
    positive_weight: float | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


def adam_step(params: LstmParams, grads: LstmParams, state: AdamState, cfg: TrainConfig) -> None:
    state.step += 1
    t = state.step
    corr1 = 1.0 - cfg.beta1 ** t
    corr2 = 1.0 - cfg.beta2 ** t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class FitResult:
    params: LstmParams
    history: History
    optimizer: AdamState


def evaluate_loss(params: LstmParams, X, y, positive_weight: float = 1.0,
                  chunk: int = 8192) -> float:
    probs = np.concatenate([forward(params, X[i:i + chunk]) for i in range(0, len(X), chunk)])
    return bce_loss(probs, y, positive_weight)


def fit(params: LstmParams, X_train, y_train, X_val=None, y_val=None,
        config: TrainConfig = TrainConfig(), optimizer: AdamState | None = None) -> FitResult:
    """Mini-batch Adam with early stopping; returns the best-validation parameters.

    Training stops once validation loss has not improved for ``patience``
    consecutive epochs (so ``patience=0`` runs exactly one epoch).
    The input ``params`` are not modified.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if len(X_train) == 0:
        raise ValueError("empty training set")
    has_val = X_val is not None and len(X_val) > 0
    if not has_val and config.patience > 0:
        raise ValueError("early stopping with patience > 0 needs a non-empty validation set")
    w = 1.0 if config.positive_weight is None else config.positive_weight

    params = params.copy()
    state = optimizer if optimizer is not None else AdamState(zeros_like(params), zeros_like(params))
    rng = np.random.default_rng(config.seed)
    hist = History()
    best, best_loss, wait = params.copy(), np.inf, 0
    n = len(X_train)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_grads(params, X_train[idx], y_train[idx], w)
            adam_step(params, grads, state, config)
            total += loss * len(idx)
        hist.train_loss.append(total / n)
        val = evaluate_loss(params, X_val, y_val, w) if has_val else hist.train_loss[-1]
        hist.val_loss.append(val)
        if val < best_loss:
            best, best_loss, wait = params.copy(), val, 0
            hist.best_epoch = epoch
        else:
            wait += 1
        log.debug("epoch %d train %.5f val %.5f", epoch, hist.train_loss[-1], val)
        if wait >= config.patience:
            break
    return FitResult(best, hist, state)


# -- persistence -----------------------------------------------------------------

def model_to_bytes(params: LstmParams) -> bytes:
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, params.input_dim, params.hidden, 1)
    body += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(blob: bytes) -> LstmParams:
    if len(blob) < _HEADER.size:
        raise ModelFormatError("model parse error: file too short")
    magic, version, d, h, out = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError("model parse error: bad magic")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    if out != 1 or d < 1 or h < 1:
        raise ModelFormatError("model parse error: bad dimensions")
    shapes = [(d, 4 * h), (h, 4 * h), (4 * h,), (h, 1), (1,)]
    n_floats = sum(int(np.prod(s)) for s in shapes)
    expected = _HEADER.size + 8 * n_floats + 4
    if len(blob) != expected:
        raise ModelFormatError(f"model parse error: expected {expected} bytes, got {len(blob)}")
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if crc != zlib.crc32(blob[:expected - 4]):
        raise ModelFormatError("model parse error: checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8", count=n_floats, offset=_HEADER.size).astype(float)
    arrays, pos = [], 0
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(flat[pos:pos + k].reshape(s).copy())
        pos += k
    return LstmParams(*arrays)


def save_model(params: LstmParams, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(params))


def load_model(path: str | Path) -> LstmParams:
    return model_from_bytes(Path(path).read_bytes())
