"""Tabular LIME over the flattened window.

Cells are named ``<feature>_t-<lag>`` where lag 0 is the most recent
timestep. Each cell is discretized into training quartiles; perturbations
resample bins from the training marginals, and a kernel-weighted ridge
regression of the model probability on the "same bin as the instance"
indicators gives one contribution per cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import FEATURES

Model = Callable[[np.ndarray], np.ndarray]
RIDGE_LAMBDA = 1e-3
KERNEL_SCALE = 0.75
MIN_SAMPLES = 50
FIDELITY_THRESHOLD = 0.7


def cell_names(window: int, features: Sequence[str] = FEATURES) -> list[str]:
    return [f"{f}_t-{window - 1 - t}" for t in range(window) for f in features]


@dataclass
class Discretizer:
    names: list[str]
    edges: list[np.ndarray]         # per cell, strictly increasing
    constant: list[float | None]    # value of a constant cell, else None
    bin_values: list[list[np.ndarray]] = field(repr=False)
    bin_freqs: list[np.ndarray] = field(repr=False)
    shape: tuple[int, int] = (3, len(FEATURES))

    @property
    def n_cells(self) -> int:
        return len(self.names)

    def n_bins(self, k: int) -> int:
        return 1 if self.constant[k] is not None else len(self.edges[k]) + 1

    def discretize(self, x: np.ndarray) -> np.ndarray:
        """Bin indices for flattened windows, shape (..., n_cells)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=np.int64)
        for k in range(self.n_cells):
            if self.constant[k] is None:
                out[..., k] = np.searchsorted(self.edges[k], x[..., k], side="left")
        return out

    def rule(self, k: int, b: int) -> str:
        name = self.names[k]
        if self.constant[k] is not None:
            return f"{name} = {self.constant[k]:.2f}"
        e = self.edges[k]
        if b == 0:
            return f"{name} <= {e[0]:.2f}"
        if b == len(e):
            return f"{name} > {e[-1]:.2f}"
        return f"{e[b - 1]:.2f} < {name} <= {e[b]:.2f}"


def fit_discretizer(train_windows, features: Sequence[str] = FEATURES,
                    max_values_per_bin: int = 2000, seed: int = 0) -> Discretizer:
    """Quartile edges per cell from training windows of shape (n, W, F)."""
    X = np.asarray(train_windows, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise ValueError("expected a non-empty stack of windows (n, W, F)")
    n, W, F = X.shape
    flat = X.reshape(n, W * F)
    rng = np.random.default_rng(seed)
    edges, constant, values, freqs = [], [], [], []
    for k in range(W * F):
        col = flat[:, k]
        if col.min() == col.max():
            edges.append(np.zeros(0))
            constant.append(float(col[0]))
            values.append([col[:1].copy()])
            freqs.append(np.ones(1))
            continue
        e = np.unique(np.percentile(col, [25, 50, 75]))
        bins = np.searchsorted(e, col, side="left")
        per_bin, fr = [], []
        for b in range(len(e) + 1):
            v = col[bins == b]
            fr.append(len(v))
            if len(v) > max_values_per_bin:
                v = rng.choice(v, max_values_per_bin, replace=False)
            per_bin.append(np.sort(v))
        fr = np.array(fr, dtype=float)
        edges.append(e)
        constant.append(None)
        values.append(per_bin)
        freqs.append(fr / fr.sum())
    return Discretizer(cell_names(W, features), edges, constant, values, freqs, (W, F))


@dataclass
class LimeExplanation:
    rules: list[tuple[str, float]]   # sorted by |phi|, descending
    cells: list[int]                 # flattened cell index of each rule
    intercept: float
    r2: float
    kernel_width: float
    n_samples: int
    model_output: float

    @property
    def local_prediction(self) -> float:
        """Surrogate value at the unperturbed instance (all indicators on)."""
        return self.intercept + sum(phi for _, phi in self.rules)

    @property
    def low_fidelity(self) -> bool:
        """The surrogate explains less than 70% of the weighted variance."""
        return self.r2 < FIDELITY_THRESHOLD

    def to_json(self) -> list[dict]:
        return [{"rule": r, "phi": float(p)} for r, p in self.rules]

    def markdown(self, per_row: int = 3) -> str:
        from .prompt import lime_table
        return lime_table(self.rules, per_row)

    def contribution(self, cell: int) -> float:
        for c, (_, p) in zip(self.cells, self.rules):
            if c == cell:
                return p
        return 0.0

    def rank(self, cell: int) -> int | None:
        return self.cells.index(cell) if cell in self.cells else None


def _weighted_ridge(Z: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float):
    sw = w.sum()
    zm = (w @ Z) / sw
    ym = (w @ y) / sw
    Zc, yc = Z - zm, y - ym
    A = (Zc.T * w) @ Zc + lam * np.eye(Z.shape[1])
    coef = np.linalg.solve(A, (Zc.T * w) @ yc)
    intercept = ym - zm @ coef
    resid = y - (Z @ coef + intercept)
    ss_tot = w @ (yc ** 2)
    ss_res = w @ (resid ** 2)
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return coef, float(intercept), float(r2)


def explain_lime(model: Model, window, discretizer: Discretizer, n_samples: int = 5000,
                 kernel_width: float | None = None, max_features: int | None = None,
                 seed: int = 0, ridge: float = RIDGE_LAMBDA) -> LimeExplanation:
    """Fit a kernel-weighted linear surrogate around one window.

    Sample 0 is the instance itself. ``max_features`` keeps only the cells
    with the largest coefficients and refits on them.
    """
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"insufficient perturbations: need >= {MIN_SAMPLES}, got {n_samples}")
    window = np.asarray(window, dtype=float)
    if window.shape != discretizer.shape:
        raise ValueError(f"window shape {window.shape} does not match discretizer {discretizer.shape}")
    M = discretizer.n_cells
    width = kernel_width if kernel_width is not None else np.sqrt(M) * KERNEL_SCALE
    k_max = M if max_features is None else max_features
    if not 1 <= k_max <= M:
        raise ValueError(f"max_features must lie in [1, {M}]")

    rng = np.random.default_rng(seed)
    x = window.ravel()
    inst = discretizer.discretize(x)
    data = np.tile(x, (n_samples, 1))
    Z = np.ones((n_samples, M))
    for k in range(M):
        nb = discretizer.n_bins(k)
        if nb == 1:
            continue
        bins = rng.choice(nb, size=n_samples - 1, p=discretizer.bin_freqs[k])
        moved = np.flatnonzero(bins != inst[k])
        for b in np.unique(bins[moved]):
            rows = moved[bins[moved] == b]
            pool = discretizer.bin_values[k][b]
            data[rows + 1, k] = pool[rng.integers(0, len(pool), size=len(rows))]
        Z[moved + 1, k] = 0.0
    y = np.asarray(model(data.reshape(n_samples, *window.shape)), dtype=float)
    d2 = M - Z.sum(axis=1)  # Hamming distance in bin space = squared Euclidean on indicators
    w = np.exp(-d2 / width ** 2)

    cols = np.arange(M)
    coef, intercept, r2 = _weighted_ridge(Z, y, w, ridge)
    if k_max < M:
        cols = np.sort(np.argsort(-np.abs(coef), kind="stable")[:k_max])
        coef, intercept, r2 = _weighted_ridge(Z[:, cols], y, w, ridge)
    order = np.argsort(-np.abs(coef), kind="stable")
    rules = [(discretizer.rule(int(cols[i]), int(inst[cols[i]])), float(coef[i])) for i in order]
    return LimeExplanation(rules, [int(cols[i]) for i in order], intercept, r2, float(width),
                           n_samples, float(y[0]))
