import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kpm_sentinel.evaluation import (Metrics, compute_metrics, prepare_days, run_sequential_days,
                                     sweep_window_ratio, write_experiment_outputs)
from kpm_sentinel.lstm import TrainConfig


def _brute(pred, true):
    tp = fp = tn = fn = 0
    for p, t in zip(pred, true):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and not t:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_metrics_match_brute_force(pairs):
    pred = [int(p) for p, _ in pairs]
    true = [int(t) for _, t in pairs]
    m = compute_metrics(pred, true)
    assert (m.tp, m.fp, m.tn, m.fn) == _brute(pred, true)
    assert 0.0 <= m.f1 <= 1.0


def test_metric_definitions():
    m = Metrics(tp=8, fp=2, tn=88, fn=2)
    assert m.precision == pytest.approx(0.8)
    assert m.recall == pytest.approx(0.8)
    assert m.f1 == pytest.approx(0.8)
    assert m.fpr_pct == pytest.approx(100 * 2 / 90)
    assert m.fnr_pct == pytest.approx(20.0)
    assert Metrics(0, 0, 5, 0).f1 == 0.0


def test_metrics_reject_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([1, 0], [1])
    with pytest.raises(ValueError, match="empty"):
        compute_metrics([], [])


def test_scaler_is_fit_on_training_windows_only(small_corpus):
    splits = prepare_days(small_corpus, 3)
    train = np.concatenate([splits.train[d].values for d in splits.days])
    assert train.min() == 0.0 and train.max() == 1.0
    assert splits.days == [1, 2, 3, 4]


def test_sequential_experiment_outputs(small_corpus, tmp_path):
    cfg = TrainConfig(max_epochs=2, patience=1)
    exp = run_sequential_days(small_corpus, [0.0, 0.3], 3, cfg, seeds=[0], hidden=8)
    assert len(exp.runs) == 2
    m = exp.stage_matrix(0.3)
    assert m.shape == (4, 4)
    assert np.isnan(m[0, 1:]).all()  # a stage never evaluates days it has not seen
    sweep = sweep_window_ratio(small_corpus, [2, 3], [0.0, 0.3], cfg, seeds=[0], hidden=8)
    assert sweep.f1.shape == (2, 2)
    summary = write_experiment_outputs(tmp_path, exp, sweep)
    for name in ("table4.csv", "fig4_series.csv", "fig5_fpr.csv", "fig5_fnr.csv",
                 "summary.json", "timing.json"):
        assert (tmp_path / name).exists()
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["sweep"]["selected"] == summary["sweep"]["selected"]
    assert "runtime" not in (tmp_path / "summary.json").read_text()


def test_experiment_is_deterministic(small_corpus):
    cfg = TrainConfig(max_epochs=1, patience=0)
    a = run_sequential_days(small_corpus, [0.3], 3, cfg, seeds=[1], hidden=4)
    b = run_sequential_days(small_corpus, [0.3], 3, cfg, seeds=[1], hidden=4)
    assert a.summary() == b.summary()
