"""Detect and explain paths built from the library pieces.

A trained detector is saved as three files next to each other:

* ``model.bin``: the LSTM weights (binary format of :mod:`kpm_sentinel.lstm`);
* ``model.bin.meta.json``: window length, threshold, scaler, normalized class
  statistics and the training summary;
* ``model.bin.xai.npz``: a sample of scaled training windows (for the LIME
  discretizer), the SHAP background window and the global mean-|phi| grid.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .data import (FEATURES, N_FEATURES, FeatureStats, Scaler, WindowSet, compute_class_stats,
                   make_windows)
from .evaluation import compute_metrics, prepare_days, run_one
from .gateway import GatewayError, InsightText, LlmClient
from .lime import Discretizer, LimeExplanation, explain_lime, fit_discretizer
from .lstm import (LstmParams, ModelFormatError, Prediction, TrainConfig, forward, load_model,
                   save_model)
from .prompt import Exemplar, render_prompt
from .readability import ReadabilityError, score_text
from .report import InsightReport, WindowRef
from .shap import GlobalImportance, explain_kernel_shap, global_importance, mean_background

log = logging.getLogger(__name__)

META_SUFFIX = ".meta.json"
XAI_SUFFIX = ".xai.npz"
META_FORMAT = "kpm-sentinel-detector"


@dataclass
class Detector:
    params: LstmParams
    scaler: Scaler
    window: int
    threshold: float
    class_stats: FeatureStats          # normalized units, shown in prompts
    train_sample: np.ndarray           # (n, W, F) scaled training windows
    background: np.ndarray             # (W, F)
    global_importance: GlobalImportance
    summary: dict

    def model(self) -> Callable[[np.ndarray], np.ndarray]:
        params = self.params
        return lambda X: np.atleast_1d(forward(params, X))

    def predict_proba(self, windows: np.ndarray, chunk: int = 8192) -> np.ndarray:
        X = np.asarray(windows, dtype=float)
        if len(X) == 0:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(forward(self.params, X[i:i + chunk]))
                               for i in range(0, len(X), chunk)])

    def discretizer(self) -> Discretizer:
        return fit_discretizer(self.train_sample)

    # -- persistence --------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_model(self.params, path)
        meta = {"format": META_FORMAT, "version": 1, "window": self.window,
                "threshold": self.threshold, "hidden": self.params.hidden,
                "features": list(FEATURES), "scaler": self.scaler.to_dict(),
                "class_stats": self.class_stats.to_dict(), "summary": self.summary}
        Path(str(path) + META_SUFFIX).write_text(json.dumps(meta, indent=2, sort_keys=True))
        np.savez_compressed(str(path) + XAI_SUFFIX, train_sample=self.train_sample,
                            background=self.background, global_phi=self.global_importance.Phi,
                            global_n=np.array(self.global_importance.n))

    @classmethod
    def load(cls, path: str | Path) -> "Detector":
        path = Path(path)
        params = load_model(path)
        meta_path, xai_path = Path(str(path) + META_SUFFIX), Path(str(path) + XAI_SUFFIX)
        for p in (meta_path, xai_path):
            if not p.exists():
                raise ModelFormatError(f"model parse error: missing sidecar {p.name}")
        try:
            meta = json.loads(meta_path.read_text())
            if meta.get("format") != META_FORMAT:
                raise ValueError("unexpected metadata format")
            with np.load(xai_path) as z:
                sample, bg = z["train_sample"], z["background"]
                gi = GlobalImportance(z["global_phi"], int(z["global_n"]))
            det = cls(params, Scaler.from_dict(meta["scaler"]), int(meta["window"]),
                      float(meta["threshold"]), FeatureStats.from_dict(meta["class_stats"]),
                      sample, bg, gi, meta.get("summary", {}))
        except (ValueError, KeyError, OSError) as exc:
            raise ModelFormatError(f"model parse error: bad sidecar ({exc})") from None
        if params.input_dim != N_FEATURES or bg.shape != (det.window, N_FEATURES):
            raise ModelFormatError("model parse error: sidecar does not match the model")
        return det


def train_detector(corpus: pd.DataFrame, window: int = 3, ratio: float = 0.3, seed: int = 0,
                   config: TrainConfig = TrainConfig(), hidden: int = 32,
                   global_samples: int = 100, n_coalitions: int = 2048,
                   train_sample_size: int = 5000) -> Detector:
    """Sequential day-by-day training with replay, then the explanation artifacts."""
    splits = prepare_days(corpus, window)
    run = run_one(splits, ratio, seed, config, hidden, keep_params=True)
    params = run.params
    train_all = WindowSet.concat([splits.train[d] for d in splits.days])
    test_all = splits.test_union()
    rng = np.random.default_rng(seed)
    take = min(train_sample_size, len(train_all))
    sample = train_all.values[np.sort(rng.choice(len(train_all), take, replace=False))]
    background = mean_background(train_all.values)

    model = lambda X: np.atleast_1d(forward(params, X))
    idx = np.sort(rng.choice(len(test_all), min(global_samples, len(test_all)), replace=False))
    expl = [explain_kernel_shap(model, test_all.values[i], background, n_coalitions, seed=int(i))
            for i in idx]
    stats = compute_class_stats(corpus, splits.scaler).normalized
    summary = {"ratio": ratio, "seed": seed, "hidden": hidden, "days": splits.days,
               "epochs": run.epochs, "test_overall": run.overall.as_dict(),
               "test_final_day_f1": {str(d): m.f1 for d, m in run.final.items()},
               "n_train_windows": len(train_all), "n_test_windows": len(test_all),
               "global_importance_windows": len(idx)}
    return Detector(params, splits.scaler, window, config.threshold, stats, sample, background,
                    global_importance(expl), summary)


# -- detection -----------------------------------------------------------------

@dataclass
class Detection:
    windows: WindowSet       # scaled
    probabilities: np.ndarray
    labels: np.ndarray
    threshold: float

    def rows(self, include_truth: bool = True):
        for i in range(len(self.windows)):
            row = {"window_id": i, "ue_id": str(self.windows.ue_ids[i]),
                   "day": int(self.windows.days[i]),
                   "start_timestamp": int(self.windows.start_timestamps[i]),
                   "probability": float(self.probabilities[i]), "label": int(self.labels[i]),
                   "values": self.windows.values[i].tolist()}
            if include_truth:
                row["true_label"] = int(self.windows.labels[i])
            yield row


def detect(detector: Detector, records: pd.DataFrame) -> Detection:
    ws = make_windows(records, detector.window).scaled(detector.scaler)
    probs = detector.predict_proba(ws.values)
    return Detection(ws, probs, (probs >= detector.threshold).astype(np.int64), detector.threshold)


def detection_metrics(det: Detection):
    return compute_metrics(det.labels, det.windows.labels)


# -- explanation -----------------------------------------------------------------

def window_ref_from_row(row: dict) -> WindowRef:
    return WindowRef(int(row["window_id"]), str(row["ue_id"]), int(row.get("day", 0)),
                     float(row.get("start_timestamp", 0)), np.asarray(row["values"], dtype=float),
                     row.get("true_label"))


def explain_window(detector: Detector, ref: WindowRef, mode: str = "zero_shot",
                   exemplars: Sequence[Exemplar] = (), client: LlmClient | None = None,
                   lime_samples: int = 5000, shap_coalitions: int = 2048, seed: int = 0,
                   discretizer: Discretizer | None = None) -> InsightReport:
    """LIME, Kernel SHAP, prompt, LLM call and readability for one window.

    A gateway failure leaves ``insight`` empty and records the error; the
    explanations are still returned.
    """
    timing = {}
    window = np.asarray(ref.values, dtype=float)
    if window.shape != (detector.window, N_FEATURES):
        raise ValueError(f"window shape {window.shape} does not match the detector")
    model = detector.model()
    p = float(model(window[None])[0])
    pred = Prediction.from_probability(p, detector.threshold)

    t = time.perf_counter()
    disc = discretizer or detector.discretizer()
    lime: LimeExplanation = explain_lime(model, window, disc, n_samples=lime_samples, seed=seed)
    timing["lime"] = (time.perf_counter() - t) * 1000
    t = time.perf_counter()
    shap = explain_kernel_shap(model, window, detector.background, shap_coalitions, seed=seed)
    timing["shap"] = (time.perf_counter() - t) * 1000
    t = time.perf_counter()
    bundle = render_prompt(detector.class_stats, window, pred, lime, shap,
                           detector.global_importance, mode, exemplars)
    timing["prompt"] = (time.perf_counter() - t) * 1000

    insight: InsightText | None = None
    error = None
    scores = None
    if client is not None:
        t = time.perf_counter()
        try:
            insight = client.complete(bundle)
        except GatewayError as exc:
            error = f"{type(exc).__name__}: {exc}"
            log.error("insight generation failed: %s", error)
        timing["llm"] = (time.perf_counter() - t) * 1000
    else:
        error = "no provider configured"
    if insight is not None:
        t = time.perf_counter()
        try:
            scores = score_text(insight.text)
        except ReadabilityError as exc:
            log.warning("readability not scored: %s", exc)
        timing["readability"] = (time.perf_counter() - t) * 1000
    return InsightReport(ref, pred, lime, shap, detector.global_importance, bundle, insight,
                         error, scores, detector.threshold, "training-time sample", timing)

