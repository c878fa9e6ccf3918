import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from kpm_sentinel.data import (CSV_COLUMNS, FEATURES, N_FEATURES, FeatureStats, KpmRecord,
                               RowParseError, SchemaError, WindowSet, build_replay_trainset,
                               compute_class_stats, contiguous_runs, fit_scaler, iter_records,
                               load_kpm_csv, make_windows, records_to_frame, split_train_test,
                               write_kpm_csv)


def _frame(n=10, ue="ue01", start=0, period=5, label=None, day=1, seed=0):
    rng = np.random.default_rng(seed)
    df = pd.DataFrame(rng.random((n, N_FEATURES)), columns=list(FEATURES))
    df.insert(0, "ue_id", ue)
    df.insert(0, "timestamp", start + period * np.arange(n))
    df["label"] = np.zeros(n, dtype=int) if label is None else label
    df["day"] = day
    return df


def test_csv_round_trip(tmp_path):
    df = pd.concat([_frame(6, "ue02"), _frame(4, "ue01", seed=1)], ignore_index=True)
    path = tmp_path / "k.csv"
    write_kpm_csv(df, path)
    res = load_kpm_csv(path)
    assert res.dropped == 0 and res.has_labels
    assert list(res.records.columns) == list(CSV_COLUMNS)
    # sorted by (ue_id, timestamp)
    assert list(res.records["ue_id"][:4]) == ["ue01"] * 4
    np.testing.assert_allclose(res.records[list(FEATURES)].to_numpy()[4:],
                               df[list(FEATURES)].to_numpy()[:6], atol=1e-6)


def test_missing_column_names_it(tmp_path):
    df = _frame(3).drop(columns=["cqi"])
    df.to_csv(tmp_path / "k.csv", index=False)
    with pytest.raises(SchemaError, match="cqi"):
        load_kpm_csv(tmp_path / "k.csv")


def test_unparseable_value_reports_line(tmp_path):
    df = _frame(3).astype({"epre": object})
    df.loc[1, "epre"] = "abc"
    df.to_csv(tmp_path / "k.csv", index=False)
    with pytest.raises(RowParseError) as exc:
        load_kpm_csv(tmp_path / "k.csv")
    assert exc.value.line == 3 and exc.value.column == "epre"


def test_nan_feature_rows_are_dropped(tmp_path):
    df = _frame(5).astype({"cqi": object})
    df.loc[2, "cqi"] = "NaN"
    df.to_csv(tmp_path / "k.csv", index=False)
    res = load_kpm_csv(tmp_path / "k.csv")
    assert res.dropped == 1 and len(res.records) == 4


def test_schema_mapping_and_optional_labels(tmp_path):
    df = _frame(4).drop(columns=["label"]).rename(columns={"pusch_snr": "snr"})
    df.to_csv(tmp_path / "k.csv", index=False)
    with pytest.raises(SchemaError):
        load_kpm_csv(tmp_path / "k.csv", schema={"pusch_snr": "snr"})
    res = load_kpm_csv(tmp_path / "k.csv", schema={"pusch_snr": "snr"}, labels_optional=True)
    assert not res.has_labels and (res.records["label"] == 0).all()


def test_record_validation_and_frame_round_trip():
    with pytest.raises(ValueError):
        KpmRecord(0, "ue", (0.0,) * 13, 0)
    with pytest.raises(ValueError):
        KpmRecord(0, "ue", (0.0,) * 14, 2)
    with pytest.raises(ValueError):
        KpmRecord(0, "ue", (np.nan,) + (0.0,) * 13, 0)
    df = _frame(4)
    back = records_to_frame(list(iter_records(df)))
    pd.testing.assert_frame_equal(back, records_to_frame(list(iter_records(back))))


def test_class_stats_population_std():
    df = _frame(40, label=np.r_[np.zeros(30, int), np.ones(10, int)])
    stats = compute_class_stats(df).raw
    x = df[list(FEATURES)].to_numpy()
    np.testing.assert_allclose(stats.attack_std, x[30:].std(axis=0, ddof=0))
    np.testing.assert_allclose(stats.normal_mean, x[:30].mean(axis=0))
    with pytest.raises(ValueError, match="missing class"):
        compute_class_stats(_frame(5))


def test_feature_stats_dict_round_trip():
    rng = np.random.default_rng(0)
    fs = FeatureStats(*(rng.random(N_FEATURES) for _ in range(4)))
    back = FeatureStats.from_dict(fs.to_dict())
    for a, b in zip((fs.normal_mean, fs.attack_std), (back.normal_mean, back.attack_std)):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
def test_scaler_maps_training_range_into_unit_interval(col):
    x = np.tile(np.array(col)[:, None], (1, N_FEATURES))
    s = fit_scaler(x)
    y = s.transform(x)
    assert y.min() >= 0.0 and y.max() <= 1.0
    if max(col) > min(col):
        assert y.min() == 0.0 and y.max() == 1.0
    else:
        assert (y == 0).all()


def test_contiguous_runs_break_on_gaps():
    ts = np.array([0, 5, 10, 30, 35, 40, 45])
    assert contiguous_runs(ts) == [(0, 3), (3, 7)]


def test_windows_respect_gaps_and_label_last_step():
    df = _frame(5, label=[0, 0, 0, 1, 0])
    df.loc[3:, "timestamp"] += 100  # a gap before sample 3
    ws = make_windows(df, 3)
    assert len(ws) == 1  # only samples 0..2 form a complete run
    df = _frame(5, label=[0, 0, 1, 0, 0])
    ws = make_windows(df, 3)
    assert len(ws) == 3 and list(ws.labels) == [1, 0, 0]
    np.testing.assert_array_equal(ws.values[1], df[list(FEATURES)].to_numpy()[1:4])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 20), st.integers(1, 3))
def test_window_count(w, n, stride):
    ws = make_windows(_frame(n) if n else _frame(0), w, stride)
    expected = 0 if n < w else len(range(0, n - w + 1, stride))
    assert len(ws) == expected
    assert ws.values.shape[1:] == (w, N_FEATURES)


def test_split_is_stratified_and_disjoint():
    labels = np.r_[np.zeros(90, int), np.ones(10, int)]
    ws = WindowSet(np.zeros((100, 3, N_FEATURES)), labels, np.array(["u"] * 100, dtype=object),
                   np.arange(100))
    tr, te = split_train_test(ws, 0.8, seed=1)
    assert len(tr) + len(te) == 100
    assert tr.labels.sum() == 8 and te.labels.sum() == 2
    assert not set(tr.start_timestamps) & set(te.start_timestamps)


def _ws(n, tag):
    return WindowSet(np.full((n, 3, N_FEATURES), float(tag)), np.zeros(n, int),
                     np.array(["u"] * n, dtype=object), np.arange(n))


@pytest.mark.parametrize("ratio,pool_n,expect,trunc", [
    (0.0, 50, 0, False), (0.3, 50, 30, False), (0.3, 10, 10, True), (1.0, 200, 100, False)])
def test_replay_size(ratio, pool_n, expect, trunc):
    rs = build_replay_trainset(_ws(100, 1), _ws(pool_n, 2), ratio, seed=0)
    assert rs.n_replayed == expect and rs.truncated == trunc
    assert len(rs.windows) == 100 + expect
    assert (rs.windows.values[100:] == 2).all()


def test_replay_ratio_bounds():
    with pytest.raises(ValueError):
        build_replay_trainset(_ws(5, 1), None, 1.5)
    assert build_replay_trainset(_ws(5, 1), None, 0.3).n_replayed == 0
