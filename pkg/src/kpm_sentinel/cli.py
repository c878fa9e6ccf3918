"""``kpm-sentinel`` command line: synth, train, detect, explain, experiment, report.

Exit codes: 0 success, 2 configuration / model / input errors, 3 the LLM
provider failed (the report is still written, with a null insight).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from copy import deepcopy
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import yaml

from .data import FeatureStats, RowParseError, SchemaError, load_kpm_csv, write_kpm_csv
from .evaluation import run_sequential_days, sweep_window_ratio, write_experiment_outputs
from .gateway import (ADAPTERS, BASE_URL_ENV, LlmClient, ProviderConfig, canned_transport,
                      record_replay)
from .lstm import ModelFormatError, TrainConfig
from .pipeline import Detector, detect, detection_metrics, explain_window, train_detector, \
    window_ref_from_row
from .prompt import Exemplar, PromptError, reference_exemplars, reference_outputs
from .report import ReportError, validate_report
from .synth import CAMPAIGN, REFERENCE_NORMALIZED, CorpusConfig, default_corpus

log = logging.getLogger("kpm_sentinel")

EXIT_OK, EXIT_CONFIG, EXIT_PROVIDER = 0, 2, 3

PROVIDER_DEFAULTS = {
    "openai": ("https://api.openai.com/v1", "gpt-4o"),
    "deepseek": ("https://api.deepseek.com", "deepseek-chat"),
    "mistral": ("https://api.mistral.ai/v1", "mistral-large-latest"),
    "gemini": ("https://generativelanguage.googleapis.com/v1beta/openai", "gemini-2.0-flash"),
    "generic": (None, None),
    "mock": ("http://mock.invalid/v1", "mock"),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _fail(message: str) -> CliError:
    return CliError(message, EXIT_CONFIG)


def _synth_corpus(cfg: CorpusConfig, stats=REFERENCE_NORMALIZED):
    if not 1 <= cfg.days <= len(CAMPAIGN):
        raise ValueError(f"days must be between 1 and {len(CAMPAIGN)}")
    return default_corpus(cfg, stats)


# -- synth -------------------------------------------------------------------------

def cmd_synth(args) -> int:
    stats = REFERENCE_NORMALIZED
    if args.stats:
        try:
            stats = FeatureStats.from_dict(json.loads(Path(args.stats).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise _fail(f"config error: cannot read stats file {args.stats}: {exc}")
    cfg = CorpusConfig(args.days, args.ues, args.samples_per_ue, args.positive_rate, args.seed)
    try:
        corpus = _synth_corpus(cfg, stats)
    except ValueError as exc:
        raise _fail(f"config error: {exc}")
    write_kpm_csv(corpus, args.out)
    print(f"wrote {len(corpus)} rows ({int(corpus['label'].sum())} malicious) to {args.out}")
    return EXIT_OK


# -- train / detect -------------------------------------------------------------------

def _load_csv(path, labels_optional=False):
    try:
        return load_kpm_csv(path, labels_optional=labels_optional)
    except FileNotFoundError:
        raise _fail(f"input error: no such file {path}")
    except pd.errors.EmptyDataError:
        raise _fail(f"parse error: {path} has no header")
    except (SchemaError, RowParseError) as exc:
        raise _fail(f"parse error: {exc}")


def _load_detector(path) -> Detector:
    try:
        return Detector.load(path)
    except FileNotFoundError:
        raise _fail(f"model error: no such file {path}")
    except ModelFormatError as exc:
        msg = str(exc)
        raise _fail(msg if msg.startswith("model parse error") else f"model parse error: {msg}")


def cmd_train(args) -> int:
    corpus = _load_csv(args.input).records
    if corpus.empty:
        raise _fail("input error: training CSV has no rows")
    try:
        cfg = TrainConfig(batch_size=args.batch_size, patience=args.patience,
                          max_epochs=args.max_epochs, threshold=args.threshold)
        det = train_detector(corpus, args.window, args.ratio, args.seed, cfg, args.hidden,
                             global_samples=args.global_samples)
    except ValueError as exc:
        raise _fail(f"config error: {exc}")
    det.save(args.model)
    o = det.summary["test_overall"]
    print(f"saved {args.model}; held-out F1 {o['f1']:.4f}, FPR {o['fpr_pct']:.3f}%, "
          f"FNR {o['fnr_pct']:.3f}%")
    return EXIT_OK


def cmd_detect(args) -> int:
    det = _load_detector(args.model)
    loaded = _load_csv(args.input, labels_optional=True)
    result = detect(det, loaded.records)
    out = open(args.out, "w", encoding="utf-8") if args.out != "-" else sys.stdout
    try:
        for row in result.rows(include_truth=loaded.has_labels):
            out.write(json.dumps(row, separators=(",", ":")) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    n = len(result.windows)
    if n == 0:
        log.warning("no complete windows in %s; nothing to detect", args.input)
        print("0 windows", file=sys.stderr)
        return EXIT_OK
    msg = f"{n} windows, {int(result.labels.sum())} flagged"
    if loaded.has_labels:
        m = detection_metrics(result)
        msg += (f"; F1 {m.f1:.4f} precision {m.precision:.4f} recall {m.recall:.4f} "
                f"FPR {m.fpr_pct:.3f}% FNR {m.fnr_pct:.3f}%")
    print(msg, file=sys.stderr)
    return EXIT_OK


# -- explain ---------------------------------------------------------------------

def _find_detection(path, window_id: int) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if int(row["window_id"]) == window_id:
                    return row
    except FileNotFoundError:
        raise _fail(f"input error: no such file {path}")
    except (ValueError, KeyError) as exc:
        raise _fail(f"parse error: {path} line {n}: {exc}")
    raise _fail(f"input error: window {window_id} not found in {path}")


def _load_exemplars(path) -> list[Exemplar]:
    try:
        items = json.loads(Path(path).read_text(encoding="utf-8"))
        exs = [Exemplar(str(e["user_text"]), str(e["assistant_text"])) for e in items]
    except FileNotFoundError:
        raise _fail(f"config error: exemplar fixtures not found at {path}")
    except (ValueError, KeyError, TypeError) as exc:
        raise _fail(f"config error: bad exemplar file {path}: {exc}")
    if not exs:
        raise _fail(f"config error: few-shot mode needs exemplar fixtures; {path} has none")
    return exs


def _provider_config(args) -> ProviderConfig:
    url, model = PROVIDER_DEFAULTS[args.provider]
    url = args.base_url or os.environ.get(BASE_URL_ENV) or url
    model = args.llm_model or model
    if not url or not model:
        raise _fail(f"config error: provider {args.provider} needs --base-url (or {BASE_URL_ENV}) "
                    "and --llm-model")
    provider = "generic" if args.provider == "mock" else args.provider
    try:
        return ProviderConfig(model=model, base_url=url, provider=provider,
                              reasoning_enabled=args.reasoning, timeout=args.timeout,
                              max_retries=args.max_retries)
    except ValueError as exc:
        raise _fail(f"config error: {exc}")


def cmd_explain(args) -> int:
    mode = {"zero": "zero_shot", "few": "few_shot"}[args.mode]
    det = _load_detector(args.model)
    row = _find_detection(args.detections, args.window_id)
    exemplars = ()
    if mode == "few_shot":
        exemplars = _load_exemplars(args.exemplars) if args.exemplars else reference_exemplars()

    config = _provider_config(args)
    if args.offline:
        if not args.replay:
            raise _fail("config error: --offline needs --replay STORE")
        try:
            transport = record_replay(args.replay, "replay")
        except FileNotFoundError as exc:
            raise _fail(f"config error: {exc}")
    else:
        inner = canned_transport(reference_outputs()[mode]) if args.provider == "mock" else None
        transport = record_replay(args.record, "record", inner) if args.record else inner

    try:
        with LlmClient(config, transport, seed=args.seed) as client:
            report = explain_window(det, window_ref_from_row(row), mode, exemplars, client,
                                    args.lime_samples, args.shap_coalitions, args.seed)
    except (PromptError, ValueError) as exc:
        raise _fail(f"config error: {exc}")
    doc = report.to_dict()
    validate_report(doc)
    text = report.to_json_text()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    if report.insight is None:
        print(f"provider failure: {report.insight_error}", file=sys.stderr)
        return EXIT_PROVIDER
    return EXIT_OK


# -- experiment ---------------------------------------------------------------------

DEFAULT_EXPERIMENT: dict = {
    "corpus": {"csv": None, "days": 4, "ues": 9, "samples_per_ue": 1450,
               "positive_rate": 0.02, "seed": 0},
    "window": 3,
    "ratios": [0.0, 0.3],
    "seeds": [0, 1, 2, 3, 4],
    "hidden": 32,
    "split_seed": 0,
    "n_jobs": 1,
    "train": {"batch_size": 64, "lr": 0.001, "patience": 3, "max_epochs": 30,
              "validation_fraction": 0.1, "positive_weight": None, "threshold": 0.5},
    "sweep": {"windows": [2, 3, 4], "ratios": [0.0, 0.3], "seeds": [0]},
}
_NULLABLE_SECTIONS = {"sweep"}


def merge_config(user: dict, defaults: dict = DEFAULT_EXPERIMENT, prefix: str = "") -> dict:
    """Overlay ``user`` on ``defaults``; unknown keys raise naming the dotted key."""
    if not isinstance(user, dict):
        raise _fail(f"config error: {prefix or 'config'} must be a mapping")
    out = deepcopy(defaults)
    for key, value in user.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise _fail(f"config error: unknown key '{dotted}'")
        if isinstance(defaults[key], dict):
            if value is None and key in _NULLABLE_SECTIONS:
                out[key] = None
            else:
                out[key] = merge_config(value, defaults[key], dotted + ".")
        else:
            out[key] = value
    return out


def load_experiment_config(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text()) if path else {}
    except FileNotFoundError:
        raise _fail(f"config error: no such file {path}")
    except yaml.YAMLError as exc:
        raise _fail(f"config error: invalid YAML: {exc}")
    return merge_config(raw or {})


def cmd_experiment(args) -> int:
    cfg = load_experiment_config(args.config)
    out = Path(args.out)
    try:
        c = cfg["corpus"]
        if c["csv"]:
            corpus = _load_csv(c["csv"]).records
        else:
            corpus = _synth_corpus(CorpusConfig(c["days"], c["ues"], c["samples_per_ue"],
                                                c["positive_rate"], c["seed"]))
        tcfg = TrainConfig(**cfg["train"])
        n_jobs = int(cfg["n_jobs"])
        exp = run_sequential_days(corpus, cfg["ratios"], cfg["window"], tcfg, cfg["seeds"],
                                  cfg["hidden"], n_jobs, cfg["split_seed"])
        sweep = None
        if cfg["sweep"]:
            s = cfg["sweep"]
            sweep = sweep_window_ratio(corpus, s["windows"], s["ratios"], tcfg, s["seeds"],
                                       cfg["hidden"], n_jobs, cfg["split_seed"])
    except (TypeError, ValueError) as exc:
        raise _fail(f"config error: {exc}")
    out.mkdir(parents=True, exist_ok=True)
    summary = write_experiment_outputs(out, exp, sweep)
    (out / "effective-config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    for r, v in summary["sequential"]["per_ratio"].items():
        print(f"ratio {r}: previous-day F1 {v['previous_day_f1']}, overall F1 {v['overall']['f1']:.4f}")
    if sweep is not None:
        print(f"selected configuration: {summary['sweep']['selected']}")
    return EXIT_OK


# -- report ----------------------------------------------------------------------------

def cmd_report(args) -> int:
    rows, bad = [], 0
    for path in args.reports:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            validate_report(doc)
        except (OSError, ValueError, ReportError) as exc:
            print(f"{path}: invalid ({exc})", file=sys.stderr)
            bad += 1
            continue
        top = doc["lime"]["rules"][0] if doc["lime"]["rules"] else {"rule": "", "phi": 0.0}
        r = doc["readability"] or {}
        rows.append([Path(path).name, str(doc["window"]["id"]), str(doc["prediction"]["label"]),
                     f"{doc['prediction']['probability']:.5f}", f"{top['rule']} ({top['phi']:+.5f})",
                     f"{doc['lime']['r2']:.3f}",
                     f"{r['flesch_reading_ease']:.2f}" if r else "-", r.get("fog_label", "-")])
    header = ["report", "window", "label", "probability", "top LIME rule", "LIME R2", "FRE", "Fog"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_CONFIG if bad else EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kpm-sentinel",
                                description="Interpretable DDoS detection on RAN KPM telemetry.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic multi-day KPM corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--stats", help="JSON per-class feature statistics (default: bundled)")
    s.add_argument("--days", type=int, default=4)
    s.add_argument("--ues", type=int, default=9)
    s.add_argument("--samples-per-ue", type=int, default=1450)
    s.add_argument("--positive-rate", type=float, default=0.02)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the LSTM detector day by day with replay")
    t.add_argument("--input", required=True)
    t.add_argument("--model", required=True)
    t.add_argument("--window", type=int, default=3)
    t.add_argument("--ratio", type=float, default=0.3)
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--patience", type=int, default=3)
    t.add_argument("--max-epochs", type=int, default=30)
    t.add_argument("--threshold", type=float, default=0.5)
    t.add_argument("--global-samples", type=int, default=100,
                   help="test windows averaged into the global SHAP importance")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score every window of a CSV, one JSON line each")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True, help="JSONL path or '-' for stdout")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("explain", help="LIME + SHAP + LLM insight report for one window")
    e.add_argument("--model", required=True)
    e.add_argument("--detections", required=True, help="JSONL written by detect")
    e.add_argument("--window-id", type=int, required=True)
    e.add_argument("--mode", choices=("zero", "few"), default="zero")
    e.add_argument("--exemplars", help="JSON list of {user_text, assistant_text} (few mode)")
    e.add_argument("--provider", choices=sorted(set(ADAPTERS) | {"mock"}), default="mock")
    e.add_argument("--llm-model")
    e.add_argument("--base-url")
    e.add_argument("--reasoning", action="store_true")
    e.add_argument("--timeout", type=float, default=60.0)
    e.add_argument("--max-retries", type=int, default=3)
    e.add_argument("--offline", action="store_true", help="answer from the --replay store only")
    e.add_argument("--replay", help="record/replay store used with --offline")
    e.add_argument("--record", help="store exchanges with the provider in this file")
    e.add_argument("--lime-samples", type=int, default=5000)
    e.add_argument("--shap-coalitions", type=int, default=2048)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_explain)

    x = sub.add_parser("experiment", help="sequential-day replay experiment and window x ratio sweep")
    x.add_argument("--config", help="YAML overrides of the default experiment")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="validate insight reports and tabulate them")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
