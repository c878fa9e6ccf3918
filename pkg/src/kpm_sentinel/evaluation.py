"""Detection metrics and the sequential-day continual-training experiments."""
from __future__ import annotations

import json
import logging
import time
import warnings
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data import (N_FEATURES, Scaler, WindowSet, build_replay_trainset, fit_scaler,
                   make_windows, split_train_test)
from .lstm import LstmParams, TrainConfig, fit, forward, init_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def fpr(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0

    @property
    def fnr(self) -> float:
        d = self.fn + self.tp
        return self.fn / d if d else 0.0

    @property
    def fpr_pct(self) -> float:
        return 100.0 * self.fpr

    @property
    def fnr_pct(self) -> float:
        return 100.0 * self.fnr

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "fpr_pct": self.fpr_pct, "fnr_pct": self.fnr_pct}


def compute_metrics(predictions, labels) -> Metrics:
    pred = np.asarray(predictions).astype(int).ravel()
    true = np.asarray(labels).astype(int).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    return Metrics(tp, fp, tn, fn)


def predict_labels(params: LstmParams, windows: WindowSet, threshold: float = 0.5,
                   chunk: int = 8192) -> np.ndarray:
    X = windows.values
    probs = np.concatenate([forward(params, X[i:i + chunk]) for i in range(0, len(X), chunk)]) \
        if len(X) else np.zeros(0)
    return (probs >= threshold).astype(int)


# -- data preparation ------------------------------------------------------------

@dataclass
class DaySplits:
    """Per-day train/test windows, scaled with a scaler fit on all training windows."""

    days: list[int]
    train: dict[int, WindowSet]
    test: dict[int, WindowSet]
    scaler: Scaler
    window: int

    def test_union(self) -> WindowSet:
        return WindowSet.concat([self.test[d] for d in self.days])


def prepare_days(corpus: pd.DataFrame, window: int = 3, train_fraction: float = 0.8,
                 split_seed: int = 0) -> DaySplits:
    windows = make_windows(corpus, window)
    days = sorted(int(d) for d in np.unique(windows.days))
    train, test = {}, {}
    for d in days:
        tr, te = split_train_test(windows.subset(np.flatnonzero(windows.days == d)),
                                  train_fraction, seed=split_seed + d)
        train[d], test[d] = tr, te
    scaler = fit_scaler(np.concatenate([train[d].values for d in days]).reshape(-1, N_FEATURES))
    return DaySplits(days, {d: w.scaled(scaler) for d, w in train.items()},
                     {d: w.scaled(scaler) for d, w in test.items()}, scaler, window)


def carve_validation(windows: WindowSet, fraction: float, seed: int) -> tuple[WindowSet, WindowSet]:
    if fraction <= 0:
        return windows, WindowSet.empty(windows.window_length)
    return split_train_test(windows, 1.0 - fraction, seed)


# -- sequential-day experiment -------------------------------------------------------

@dataclass
class SequentialRun:
    """One (ratio, seed) run: F1 of the model after each day on every seen day."""

    ratio: float
    seed: int
    days: list[int]
    f1: np.ndarray                 # (stage, eval day), NaN where not evaluated or invalid
    final: dict[int, Metrics]      # final model, per day
    overall: Metrics               # final model on the union of test sets
    epochs: list[int]
    params: LstmParams | None = None


def _valid(ws: WindowSet) -> bool:
    return len(ws) > 0 and ws.labels.min() == 0 and ws.labels.max() == 1


def run_one(splits: DaySplits, ratio: float, seed: int, config: TrainConfig,
            hidden: int = 32, keep_params: bool = False) -> SequentialRun:
    days = splits.days
    params = init_model(seed, N_FEATURES, hidden)
    opt = None
    pool: WindowSet | None = None
    f1 = np.full((len(days), len(days)), np.nan)
    epochs = []
    for k, day in enumerate(days):
        stage_seed = seed * 1000 + k
        rs = build_replay_trainset(splits.train[day], pool, ratio, seed=stage_seed)
        tr, val = carve_validation(rs.windows, config.validation_fraction, stage_seed)
        res = fit(params, tr.values, tr.labels, val.values, val.labels,
                  config.with_seed(stage_seed), optimizer=opt)
        params, opt = res.params, res.optimizer
        epochs.append(res.history.epochs)
        pool = splits.train[day] if pool is None else WindowSet.concat([pool, splits.train[day]])
        for j, d in enumerate(days[:k + 1]):
            if _valid(splits.test[d]):
                pred = predict_labels(params, splits.test[d], config.threshold)
                f1[k, j] = compute_metrics(pred, splits.test[d].labels).f1
    final = {d: compute_metrics(predict_labels(params, splits.test[d], config.threshold),
                                splits.test[d].labels) for d in days}
    union = splits.test_union()
    overall = compute_metrics(predict_labels(params, union, config.threshold), union.labels)
    return SequentialRun(ratio, seed, days, f1, final, overall, epochs,
                         params if keep_params else None)


@dataclass
class ExperimentResult:
    window: int
    ratios: list[float]
    seeds: list[int]
    days: list[int]
    runs: list[SequentialRun] = field(repr=False)
    runtime_s: float = 0.0

    def _runs(self, ratio: float) -> list[SequentialRun]:
        return [r for r in self.runs if r.ratio == ratio]

    def final_day_f1(self, ratio: float) -> np.ndarray:
        """Seed-averaged F1 of the final model on each day's test set (NaN if invalid)."""
        rows = [[r.final[d].f1 if _valid_metrics(r.final[d]) else np.nan for d in self.days]
                for r in self._runs(ratio)]
        with _quiet_nan():
            return np.nanmean(np.array(rows), axis=0)

    def previous_day_f1(self, ratio: float) -> float:
        """Mean F1 of the final model over the days before the last one, seed-averaged."""
        return float(np.nanmean(self.final_day_f1(ratio)[:-1])) if len(self.days) > 1 \
            else float(self.final_day_f1(ratio)[0])

    def stage_matrix(self, ratio: float) -> np.ndarray:
        with _quiet_nan():
            return np.nanmean(np.stack([r.f1 for r in self._runs(ratio)]), axis=0)

    def overall(self, ratio: float) -> dict[str, float]:
        ms = [r.overall for r in self._runs(ratio)]
        return {"f1": float(np.mean([m.f1 for m in ms])),
                "fpr_pct": float(np.mean([m.fpr_pct for m in ms])),
                "fnr_pct": float(np.mean([m.fnr_pct for m in ms])),
                "precision": float(np.mean([m.precision for m in ms])),
                "recall": float(np.mean([m.recall for m in ms]))}

    def fig4_series(self) -> pd.DataFrame:
        """Per training stage: mean F1 over all days seen so far."""
        rows = []
        for ratio in self.ratios:
            m = self.stage_matrix(ratio)
            for k, day in enumerate(self.days):
                with _quiet_nan():
                    rows.append({"ratio": ratio, "stage_day": day,
                                 "mean_f1_seen_days": float(np.nanmean(m[k, :k + 1]))})
        return pd.DataFrame(rows)

    def table4(self) -> pd.DataFrame:
        return pd.DataFrame([[r, *self.final_day_f1(r)] for r in self.ratios],
                            columns=["ratio", *[f"day_{d}" for d in self.days]])

    def summary(self) -> dict:
        return {
            "window": self.window, "ratios": self.ratios, "seeds": self.seeds, "days": self.days,
            "per_ratio": {str(r): {"final_day_f1": _nan_to_none(self.final_day_f1(r)),
                                   "previous_day_f1": _none_if_nan(self.previous_day_f1(r)),
                                   "overall": self.overall(r),
                                   "invalid_days": [d for d, v in zip(self.days, self.final_day_f1(r))
                                                    if np.isnan(v)]}
                          for r in self.ratios},
        }


@contextmanager
def _quiet_nan():
    """Silence the empty-slice warnings of nanmean; all-NaN cells stay NaN."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def _valid_metrics(m: Metrics) -> bool:
    return (m.tp + m.fn) > 0 and (m.tn + m.fp) > 0


def _none_if_nan(x: float):
    return None if np.isnan(x) else float(x)


def _nan_to_none(a) -> list:
    return [_none_if_nan(float(v)) for v in a]


def _run_job(args):
    splits, ratio, seed, config, hidden = args
    return run_one(splits, ratio, seed, config, hidden)


def _map(jobs, n_jobs: int):
    if n_jobs <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(n_jobs) as ex:
        return list(ex.map(_run_job, jobs))


def run_sequential_days(corpus: pd.DataFrame | DaySplits, ratios: Sequence[float] = (0.0, 0.3),
                        window: int = 3, config: TrainConfig = TrainConfig(),
                        seeds: Sequence[int] = (0, 1, 2, 3, 4), hidden: int = 32,
                        n_jobs: int = 1, split_seed: int = 0) -> ExperimentResult:
    """Train day by day (continuing from the previous weights) for every ratio and seed."""
    t0 = time.perf_counter()
    splits = corpus if isinstance(corpus, DaySplits) else prepare_days(corpus, window, split_seed=split_seed)
    for d in splits.days:
        if not _valid(splits.test[d]):
            log.warning("day %d test split lacks one class; its cells are flagged invalid", d)
    jobs = [(splits, float(r), int(s), config, hidden) for r in ratios for s in seeds]
    runs = _map(jobs, n_jobs)
    return ExperimentResult(splits.window, [float(r) for r in ratios], [int(s) for s in seeds],
                            splits.days, runs, time.perf_counter() - t0)


@dataclass
class SweepResult:
    windows: list[int]
    ratios: list[float]
    fpr: np.ndarray   # (windows, ratios), percent
    fnr: np.ndarray
    f1: np.ndarray
    experiments: dict[int, ExperimentResult] = field(repr=False)

    def best_cell(self) -> tuple[int, float]:
        """(window, ratio) with the smallest F1 regret, i.e. the highest mean F1."""
        i, j = np.unravel_index(np.nanargmax(self.f1), self.f1.shape)
        return self.windows[i], self.ratios[j]

    def grid_frame(self, which: str) -> pd.DataFrame:
        grid = {"fpr": self.fpr, "fnr": self.fnr, "f1": self.f1}[which]
        df = pd.DataFrame(grid, index=self.windows, columns=[f"{r:g}" for r in self.ratios])
        df.index.name = "window"
        return df


def sweep_window_ratio(corpus: pd.DataFrame, windows: Sequence[int] = (3,),
                       ratios: Sequence[float] = (0.0, 0.3), config: TrainConfig = TrainConfig(),
                       seeds: Sequence[int] = (0, 1, 2, 3, 4), hidden: int = 32,
                       n_jobs: int = 1, split_seed: int = 0) -> SweepResult:
    if any(w < 1 for w in windows):
        raise ValueError("window sizes must be >= 1")
    fpr = np.zeros((len(windows), len(ratios)))
    fnr, f1 = np.zeros_like(fpr), np.zeros_like(fpr)
    exps = {}
    for i, w in enumerate(windows):
        exp = run_sequential_days(corpus, ratios, w, config, seeds, hidden, n_jobs, split_seed)
        exps[w] = exp
        for j, r in enumerate(exp.ratios):
            o = exp.overall(r)
            fpr[i, j], fnr[i, j], f1[i, j] = o["fpr_pct"], o["fnr_pct"], o["f1"]
    return SweepResult(list(windows), [float(r) for r in ratios], fpr, fnr, f1, exps)


def write_experiment_outputs(out_dir: str | Path, experiment: ExperimentResult,
                             sweep: SweepResult | None = None, extra: dict | None = None) -> dict:
    """Write table4.csv, fig4_series.csv, fig5_{fpr,fnr}.csv and summary.json.

    Wall-clock runtimes go to timing.json so every other file is a
    deterministic function of corpus, config and seeds.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    experiment.table4().to_csv(out / "table4.csv", index=False, float_format="%.6f")
    experiment.fig4_series().to_csv(out / "fig4_series.csv", index=False, float_format="%.6f")
    summary = {"sequential": experiment.summary()}
    if sweep is not None:
        sweep.grid_frame("fpr").to_csv(out / "fig5_fpr.csv", float_format="%.6f")
        sweep.grid_frame("fnr").to_csv(out / "fig5_fnr.csv", float_format="%.6f")
        w, r = sweep.best_cell()
        summary["sweep"] = {"windows": sweep.windows, "ratios": sweep.ratios,
                            "f1": sweep.f1.tolist(), "fpr_pct": sweep.fpr.tolist(),
                            "fnr_pct": sweep.fnr.tolist(),
                            "selected": {"window": w, "ratio": r}}
    if extra:
        summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    timing = {"sequential_runtime_s": experiment.runtime_s}
    if sweep is not None:
        timing["sweep_runtime_s"] = sum(e.runtime_s for e in sweep.experiments.values())
    (out / "timing.json").write_text(json.dumps(timing, indent=2))
    return summary
