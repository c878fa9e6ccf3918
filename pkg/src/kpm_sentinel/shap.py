"""Shapley attributions over (timestep, feature) cells.

Every cell of a window is a player. A coalition keeps its cells from the
explained window and replaces the rest with background values; with several
background windows the masked outputs are averaged.

``explain_kernel_shap`` solves the Shapley-kernel weighted least-squares
problem with the efficiency constraint eliminated analytically, so
``phi.sum() + base_value`` reproduces the model output up to rounding.
``exact_shapley`` enumerates every coalition and is the reference for small
player counts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb, factorial
from typing import Callable, Sequence

import numpy as np

from .data import FEATURES

log = logging.getLogger(__name__)

Model = Callable[[np.ndarray], np.ndarray]
MAX_EXACT_PLAYERS = 20
RIDGE_FALLBACK = 1e-6


def shapley_kernel_weight(M: int, s: int) -> float:
    """(M-1) / (C(M,s) * s * (M-s)) for 0 < s < M."""
    if not 0 < s < M:
        raise ValueError("empty and full coalitions carry infinite weight; they are handled as constraints")
    return (M - 1) / (comb(M, s) * s * (M - s))


def _logit_model(model: Model) -> Model:
    def f(X):
        p = np.clip(np.asarray(model(X), dtype=float), 1e-12, 1 - 1e-12)
        return np.log(p / (1 - p))
    return f


@dataclass
class ShapExplanation:
    phi: np.ndarray            # same shape as the window
    base_value: float
    model_output: float
    n_coalitions: int = 0
    ridge_fallback: bool = False
    output: str = "probability"

    def local_accuracy_gap(self) -> float:
        return abs(float(self.phi.sum()) + self.base_value - self.model_output)

    def to_json(self, features: Sequence[str] = FEATURES) -> dict:
        return {
            "base": float(self.base_value),
            "phi": self.phi.tolist(),
            "timesteps": [f"T{t}" for t in range(self.phi.shape[0])],
            "features": list(features),
        }

    def top_cells(self, k: int = 5, features: Sequence[str] = FEATURES) -> list[tuple[str, float]]:
        order = np.argsort(-self.phi.ravel(), kind="stable")[:k]
        W, F = self.phi.shape
        return [(f"{features[i % F]}_T{i // F}", float(self.phi.ravel()[i])) for i in order]


@dataclass
class GlobalImportance:
    Phi: np.ndarray
    n: int

    def to_json(self, features: Sequence[str] = FEATURES) -> dict:
        return {"Phi": self.Phi.tolist(), "n": self.n,
                "timesteps": [f"T{t}" for t in range(self.Phi.shape[0])],
                "features": list(features)}

    def top_cells(self, k: int = 10, features: Sequence[str] = FEATURES) -> list[tuple[str, float]]:
        order = np.argsort(-self.Phi.ravel(), kind="stable")[:k]
        F = self.Phi.shape[1]
        return [(f"{features[i % F]}_T{i // F}", float(self.Phi.ravel()[i])) for i in order]


def mean_background(windows: np.ndarray) -> np.ndarray:
    """Per-cell mean of a stack of windows (n, W, F) -> (W, F)."""
    return np.asarray(windows, dtype=float).mean(axis=0)


def _backgrounds(background: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    bg = np.asarray(background, dtype=float)
    if bg.shape == shape:
        return bg[None]
    if bg.ndim == len(shape) + 1 and bg.shape[1:] == shape:
        return bg
    raise ValueError(f"background shape {bg.shape} does not match window shape {shape}")


class _MaskedModel:
    """Evaluates f on windows whose absent cells come from the background(s)."""

    def __init__(self, model: Model, window: np.ndarray, backgrounds: np.ndarray,
                 chunk: int = 16384):
        self.model = model
        self.x = window.ravel()
        self.bgs = backgrounds.reshape(len(backgrounds), -1)
        self.shape = window.shape
        self.chunk = chunk

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=bool)
        out = np.zeros(len(Z))
        for bg in self.bgs:
            for s in range(0, len(Z), self.chunk):
                z = Z[s:s + self.chunk]
                X = np.where(z, self.x, bg).reshape(len(z), *self.shape)
                out[s:s + self.chunk] += np.asarray(self.model(X), dtype=float)
        return out / len(self.bgs)


def _prepare(model, window, background, output):
    window = np.asarray(window, dtype=float)
    if output == "logit":
        model = _logit_model(model)
    elif output != "probability":
        raise ValueError(f"unknown output {output!r}")
    bgs = _backgrounds(background, window.shape)
    return model, window, bgs, _MaskedModel(model, window, bgs)


def exact_shapley(model: Model, window, background, output: str = "probability") -> ShapExplanation:
    """Shapley values by full enumeration of the 2^M coalitions (M <= 20)."""
    model, window, bgs, f = _prepare(model, window, background, output)
    M = window.size
    if M > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact enumeration refused for {M} players (limit {MAX_EXACT_PLAYERS})")
    masks = np.arange(2 ** M, dtype=np.int64)
    Z = ((masks[:, None] >> np.arange(M)) & 1).astype(bool)
    v = f(Z)
    size = Z.sum(axis=1)
    w = np.array([factorial(s) * factorial(M - s - 1) / factorial(M) for s in range(M)])
    phi = np.zeros(M)
    for i in range(M):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(w[size[without]] * (v[without | (1 << i)] - v[without]))
    return ShapExplanation(phi.reshape(window.shape), float(v[0]), float(v[-1]),
                           n_coalitions=2 ** M, output=output)


def _all_coalitions(M: int) -> tuple[np.ndarray, np.ndarray]:
    masks = np.arange(1, 2 ** M - 1, dtype=np.int64)
    Z = ((masks[:, None] >> np.arange(M)) & 1).astype(bool)
    w = np.array([shapley_kernel_weight(M, s) for s in range(1, M)])[Z.sum(1) - 1]
    return Z, w


def _sample_coalitions(M: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Paired draws: a coalition with size drawn proportional to its total kernel mass, then its complement."""
    sizes = np.arange(1, M)
    mass = (M - 1) / (sizes * (M - sizes))
    half = n // 2
    s = rng.choice(sizes, size=half, p=mass / mass.sum())
    keys = rng.random((half, M))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    Z = ranks < s[:, None]
    Z = np.concatenate([Z, ~Z])
    # importance weights are uniform when sampling follows the kernel
    return Z, np.ones(len(Z))


def _solve(Z: np.ndarray, y: np.ndarray, w: np.ndarray, delta: float) -> tuple[np.ndarray, bool]:
    """Weighted least squares for phi subject to sum(phi) = delta."""
    k = Z.shape[1]
    if k == 1:
        return np.array([delta]), False
    Zf = Z.astype(float)
    A = Zf[:, :-1] - Zf[:, -1:]
    b = y - Zf[:, -1] * delta
    AtW = A.T * w
    G = AtW @ A
    rhs = AtW @ b
    fallback = False
    if np.linalg.cond(G) > 1e12:
        fallback = True
        G = G + RIDGE_FALLBACK * np.eye(k - 1)
        log.warning("kernel SHAP system is singular; using ridge fallback")
    head = np.linalg.solve(G, rhs)
    return np.append(head, delta - head.sum()), fallback


def explain_kernel_shap(model: Model, window, background, n_coalitions: int = 2048,
                        seed: int = 0, output: str = "probability",
                        exact_coalitions: bool = False) -> ShapExplanation:
    """Kernel SHAP with paired coalition sampling and exact efficiency.

    Cells equal to the background in every background window cannot change
    the output and get phi = 0 without entering the regression.
    ``exact_coalitions=True`` uses every coalition with its kernel weight,
    which recovers the exact Shapley values.
    """
    model, window, bgs, f = _prepare(model, window, background, output)
    shape = window.shape
    M = window.size
    fx = float(np.asarray(model(window[None]), dtype=float)[0])
    base = float(np.mean(np.asarray(model(bgs), dtype=float)))
    delta = fx - base
    varying = np.flatnonzero(np.any(bgs.reshape(len(bgs), -1) != window.ravel(), axis=0))
    phi = np.zeros(M)
    fallback = False
    n_eval = 0
    if len(varying) == 1:
        phi[varying] = delta
    elif len(varying) > 1:
        k = len(varying)
        if not exact_coalitions and n_coalitions < 2 * M:
            raise ValueError(f"n_coalitions must be >= 2M = {2 * M}")
        if exact_coalitions:
            if k > MAX_EXACT_PLAYERS:
                raise ValueError("exact coalition enumeration refused for more than 20 varying cells")
            Zk, w = _all_coalitions(k)
        else:
            Zk, w = _sample_coalitions(k, n_coalitions, np.random.default_rng(seed))
        Z = np.ones((len(Zk), M), dtype=bool)
        Z[:, varying] = Zk
        y = f(Z) - base
        n_eval = len(Z)
        phi[varying], fallback = _solve(Zk, y, w, delta)
    return ShapExplanation(phi.reshape(shape), base, fx, n_eval, fallback, output)


def explain_many(model: Model, windows: np.ndarray, background, n_coalitions: int = 2048,
                 seed: int = 0, output: str = "probability") -> list[ShapExplanation]:
    return [explain_kernel_shap(model, w, background, n_coalitions, seed + i, output)
            for i, w in enumerate(np.asarray(windows))]


def global_importance(explanations: Sequence[ShapExplanation]) -> GlobalImportance:
    """Elementwise mean of |phi| over the explanations."""
    if not explanations:
        raise ValueError("need at least one explanation")
    shape = explanations[0].phi.shape
    for e in explanations:
        if e.phi.shape != shape:
            raise ValueError(f"shape mismatch: {e.phi.shape} vs {shape}")
    return GlobalImportance(np.mean([np.abs(e.phi) for e in explanations], axis=0), len(explanations))
