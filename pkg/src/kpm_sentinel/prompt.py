"""Structured LLM prompts built from detector outputs and explanations.

The user text has seven sections in a fixed order: class statistics, the
input window, the model prediction, the LIME rule table, the local SHAP
heatmap, the global SHAP importance table and the task instructions. Tables
are markdown with five-decimal fixed-point numbers, so rendering the same
inputs always yields the same bytes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .data import FEATURES, FeatureStats

SYSTEM_TEXT = "You are a cybersecurity expert analyzing LSTM outputs for DDoS detection."
FEW_SHOT_FORMAT = ("Respond with 3 sections: Anomaly Summary (3-6 bullet points), "
                   "Misclassification Likelihood (1-2 bullets), and Mitigation Steps (2-4 bullets).")
TASK_TEXT = ("Provide a human-readable summary of the model's decision. Highlight the most "
             "influential features or patterns that contributed to the classification. Assess "
             "the likelihood of misclassification and suggest actionable mitigation strategies "
             "for the network operator.")
LABEL_NAMES = {0: "Normal", 1: "Anomalous"}
MODES = ("zero_shot", "few_shot")
TOKENS_PER_WORD_PCT = 135  # 1.35 tokens per whitespace-delimited word


class PromptError(ValueError):
    pass


def fmt(v: float) -> str:
    s = f"{float(v):.5f}"
    return "0.00000" if s == "-0.00000" else s


def _row(cells: Sequence[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = [_row(header), _row(["---"] * len(header))]
    lines += [_row(r) for r in rows]
    return "\n".join(lines)


def _grid(values: np.ndarray, features: Sequence[str]) -> str:
    rows = [[f"T{t}"] + [fmt(v) for v in values[t]] for t in range(values.shape[0])]
    return _table(["Timestep", *features], rows)


def stats_table(stats: FeatureStats, features: Sequence[str] = FEATURES) -> str:
    cols = [stats.normal_mean, stats.normal_std, stats.attack_mean, stats.attack_std]
    rows = [[name] + [fmt(c[i]) for c in cols] for i, name in enumerate(features)]
    return _table(["Feature", "Normal Mean", "Normal Std", "Attack Mean", "Attack Std"], rows)


def lime_table(rules: Sequence[tuple[str, float]], per_row: int = 3) -> str:
    """Rules in reading order, ``per_row`` (rule, contribution) pairs per table row."""
    rows = []
    for start in range(0, len(rules), per_row):
        chunk = list(rules[start:start + per_row])
        cells = []
        for rule, phi in chunk:
            cells += [rule, fmt(phi)]
        cells += [""] * (2 * (per_row - len(chunk)))
        rows.append(cells)
    return _table(["Feature", "Contrib."] * per_row, rows)


def _as_array(x, name: str) -> np.ndarray:
    for attr in ("phi", "Phi"):
        if hasattr(x, attr):
            x = getattr(x, attr)
    a = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(a)):
        raise PromptError(f"{name} contains non-finite values")
    return a


def _as_rules(lime) -> list[tuple[str, float]]:
    rules = getattr(lime, "rules", lime)
    out = [(str(r), float(p)) for r, p in rules]
    if not out:
        raise PromptError("LIME explanation has no rules")
    return out


def _as_label(prediction) -> int:
    label = getattr(prediction, "label", prediction)
    label = int(label)
    if label not in LABEL_NAMES:
        raise PromptError(f"prediction label must be 0 or 1, got {label}")
    return label


def render_user_text(stats: FeatureStats, window, prediction, lime, shap_local, shap_global,
                     features: Sequence[str] = FEATURES) -> str:
    """The user message for one window (no exemplars)."""
    F = len(features)
    w = _as_array(window, "window")
    if w.ndim != 2 or w.shape[1] != F:
        raise PromptError(f"window must have shape (W, {F}), got {w.shape}")
    local = _as_array(shap_local, "shap_local")
    glob = _as_array(shap_global, "shap_global")
    for name, a in (("shap_local", local), ("shap_global", glob)):
        if a.shape != w.shape:
            raise PromptError(f"{name} shape {a.shape} does not match window shape {w.shape}")
    for name in ("normal_mean", "normal_std", "attack_mean", "attack_std"):
        if np.shape(getattr(stats, name)) != (F,):
            raise PromptError(f"stats.{name} must have {F} entries")
    rules = _as_rules(lime)
    if len(rules) > w.size:
        raise PromptError(f"{len(rules)} LIME rules for a window of {w.size} cells")
    label = _as_label(prediction)

    sections = [
        "**Normalized General Data Distribution (Feature Statistics):**\n\n" + stats_table(stats, features),
        f"**Input Sequence to LSTM Model ({w.shape[0]} timesteps x {F} features):**\n\n" + _grid(w, features),
        f"Model Prediction Output: {label} ({LABEL_NAMES[label]})",
        "**Local Explanation Table (LIME):**\n\n" + lime_table(rules),
        "**SHAP Local Heatmap:**\n\n" + _grid(local, features),
        "**Global SHAP Feature Importance:**\n\n" + _grid(glob, features),
        "**Task for the LLM:**\n" + TASK_TEXT,
    ]
    return "\n\n".join(sections) + "\n"


@dataclass(frozen=True)
class Exemplar:
    user_text: str
    assistant_text: str


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    mode: str = "zero_shot"
    exemplars: tuple[Exemplar, ...] = field(default_factory=tuple)

    def messages(self) -> list[dict]:
        msgs = [{"role": "system", "content": self.system_text}]
        for ex in self.exemplars:
            msgs.append({"role": "user", "content": ex.user_text})
            msgs.append({"role": "assistant", "content": ex.assistant_text})
        msgs.append({"role": "user", "content": self.user_text})
        return msgs

    def to_json(self) -> dict:
        return {"system": self.system_text, "messages": self.messages()[1:]}

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def render_prompt(stats: FeatureStats, window, prediction, lime, shap_local, shap_global,
                  mode: str = "zero_shot", exemplars: Sequence[Exemplar] = (),
                  system_text: str | None = None) -> PromptBundle:
    """Render a prompt bundle; few-shot mode prepends the exemplar pairs in order."""
    if mode not in MODES:
        raise PromptError(f"unknown prompt mode {mode!r}")
    if mode == "few_shot" and not exemplars:
        raise PromptError("few_shot mode needs at least one exemplar")
    if system_text is None:
        system_text = SYSTEM_TEXT if mode == "zero_shot" else f"{SYSTEM_TEXT} {FEW_SHOT_FORMAT}"
    user = render_user_text(stats, window, prediction, lime, shap_local, shap_global)
    exs = tuple(exemplars) if mode == "few_shot" else ()
    return PromptBundle(system_text, user, mode, exs)


def estimate_tokens(bundle: PromptBundle | str) -> int:
    """Whitespace word count times 1.35, rounded up (budget warnings only)."""
    if isinstance(bundle, str):
        texts = [bundle]
    else:
        texts = [m["content"] for m in bundle.messages()]
    words = sum(len(t.split()) for t in texts)
    return -(-words * TOKENS_PER_WORD_PCT // 100)


# Shipped fixtures: inputs transcribed from the reference prompts plus the
# human-written exemplar answers and two reference LLM outputs.

def _fixture_text(name: str) -> str:
    return resources.files("kpm_sentinel").joinpath("fixtures", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptInputs:
    stats: FeatureStats
    window: np.ndarray
    prediction: int
    lime: list
    shap_local: np.ndarray
    shap_global: np.ndarray

    def render(self, mode: str = "zero_shot", exemplars: Sequence[Exemplar] = ()) -> PromptBundle:
        return render_prompt(self.stats, self.window, self.prediction, self.lime,
                             self.shap_local, self.shap_global, mode, exemplars)

    def user_text(self) -> str:
        return render_user_text(self.stats, self.window, self.prediction, self.lime,
                                self.shap_local, self.shap_global)


FIXTURE_NAMES = ("zero_shot_query", "few_shot_tn", "few_shot_tp", "few_shot_query")


def fixture_inputs(name: str) -> PromptInputs:
    """One of ``FIXTURE_NAMES``."""
    data = json.loads(_fixture_text("prompt_inputs.json"))
    if name not in data:
        raise KeyError(f"unknown prompt fixture {name!r}")
    d = data[name]
    cols = np.array([d["stats"][f] for f in FEATURES], dtype=float)
    stats = FeatureStats(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])
    return PromptInputs(stats, np.array(d["window"]), d["prediction"],
                        [(r, p) for r, p in d["lime"]], np.array(d["shap_local"]),
                        np.array(d["shap_global"]))


def reference_exemplars() -> tuple[Exemplar, Exemplar]:
    """The TN and TP exemplar pairs, in the order they are shown to the model."""
    tn = Exemplar(fixture_inputs("few_shot_tn").user_text(), _fixture_text("exemplar_tn_response.md"))
    tp = Exemplar(fixture_inputs("few_shot_tp").user_text(), _fixture_text("exemplar_tp_response.md"))
    return tn, tp


def reference_outputs() -> dict[str, str]:
    """Reference LLM answers for the zero-shot and few-shot query prompts."""
    return {"zero_shot": _fixture_text("zero_shot_output.md"),
            "few_shot": _fixture_text("few_shot_output.md")}
