"""InsightReport: one JSON document per explained window.

Everything the explain path produced for a window lives here: the window
itself, the prediction, both local explanations, the global importance used in
the prompt, a digest of the prompt, the LLM answer (or the error that
prevented it), readability scores and per-stage timings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

import jsonschema
import numpy as np

from .data import FEATURES
from .gateway import InsightText
from .lime import LimeExplanation
from .lstm import Prediction
from .prompt import PromptBundle, estimate_tokens
from .readability import ReadabilityScores
from .shap import GlobalImportance, ShapExplanation

SCHEMA_VERSION = 1
LOCAL_ACCURACY_TOL = 1e-6


class ReportError(ValueError):
    pass


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("kpm_sentinel").joinpath("schemas", "insight_report.schema.json")
    return json.loads(text.read_text(encoding="utf-8"))


@dataclass
class WindowRef:
    id: int
    ue_id: str
    day: int
    start_timestamp: float
    values: np.ndarray
    label: int | None = None

    def to_dict(self, features: Sequence[str] = FEATURES) -> dict:
        return {"id": int(self.id), "ue_id": str(self.ue_id), "day": int(self.day),
                "start_timestamp": float(self.start_timestamp),
                "label": None if self.label is None else int(self.label),
                "values": np.asarray(self.values, dtype=float).tolist(),
                "features": list(features)}


@dataclass
class InsightReport:
    window: WindowRef
    prediction: Prediction
    lime: LimeExplanation
    shap: ShapExplanation
    global_importance: GlobalImportance
    prompt: PromptBundle
    insight: InsightText | None = None
    insight_error: str | None = None
    readability: ReadabilityScores | None = None
    threshold: float = 0.5
    global_source: str = ""
    timing_ms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        wid = int(self.window.id)
        shap = self.shap.to_json()
        shap.update(window_id=wid, model_output=float(self.shap.model_output),
                    n_coalitions=int(self.shap.n_coalitions))
        gi = {"n": int(self.global_importance.n), "Phi": self.global_importance.Phi.tolist()}
        if self.global_source:
            gi["source"] = self.global_source
        return {
            "schema_version": SCHEMA_VERSION,
            "window": self.window.to_dict(),
            "prediction": {"window_id": wid, "probability": float(self.prediction.probability),
                           "label": int(self.prediction.label), "threshold": float(self.threshold)},
            "lime": {"window_id": wid, "rules": self.lime.to_json(),
                     "intercept": float(self.lime.intercept), "r2": float(self.lime.r2),
                     "kernel_width": float(self.lime.kernel_width),
                     "n_samples": int(self.lime.n_samples),
                     "low_fidelity": bool(self.lime.low_fidelity)},
            "shap": shap,
            "global_importance": gi,
            "prompt": {"mode": self.prompt.mode, "digest": self.prompt.digest(),
                       "estimated_tokens": estimate_tokens(self.prompt)},
            "insight": None if self.insight is None else self.insight.to_dict(),
            "insight_error": self.insight_error,
            "readability": None if self.readability is None else self.readability.to_dict(),
            "timing_ms": {k: float(v) for k, v in sorted(self.timing_ms.items())},
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def validate_report(doc: dict) -> None:
    """Schema validation plus cross-section consistency checks."""
    try:
        jsonschema.validate(doc, report_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ReportError(f"schema violation at '{path}': {exc.message}") from None
    wid = doc["window"]["id"]
    for section in ("prediction", "lime", "shap"):
        if doc[section]["window_id"] != wid:
            raise ReportError(f"{section} refers to window {doc[section]['window_id']}, not {wid}")
    values = np.asarray(doc["window"]["values"])
    for name, grid in (("shap.phi", doc["shap"]["phi"]), ("global_importance.Phi", doc["global_importance"]["Phi"])):
        if np.shape(grid) != values.shape:
            raise ReportError(f"{name} shape {np.shape(grid)} differs from window shape {values.shape}")
    gap = abs(np.sum(doc["shap"]["phi"]) + doc["shap"]["base"] - doc["prediction"]["probability"])
    if gap > LOCAL_ACCURACY_TOL:
        raise ReportError(f"SHAP local accuracy violated by {gap:.3g}")
    if doc["insight"] is None and doc["readability"] is not None:
        raise ReportError("readability scores without an insight")
