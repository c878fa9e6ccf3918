"""KPM ingestion, class statistics, MinMax scaling, windowing and replay sets.

Records are carried as a :class:`pandas.DataFrame` with the fixed column
layout of :data:`CSV_COLUMNS`; :class:`KpmRecord` is the row-level view.
Windows are carried columnar in a :class:`WindowSet` because the experiment
corpora hold tens of thousands of them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

FEATURES: tuple[str, ...] = (
    "epre", "pusch_snr", "p_ue", "ul_mcs", "cqi", "ul_bitrate", "dl_mcs",
    "dl_retx", "ul_tx", "dl_tx", "ul_retx", "dl_bitrate", "dl_err", "ul_err",
)
N_FEATURES = len(FEATURES)
CSV_COLUMNS: tuple[str, ...] = ("timestamp", "ue_id", *FEATURES, "label", "day")
SAMPLING_PERIOD = 5.0
GAP_FACTOR = 1.5

_NAN_TOKENS = {"", "nan", "NaN", "NAN", "NA", "N/A", "null", "None"}


class SchemaError(ValueError):
    """A required column is absent from the input."""

    def __init__(self, column: str):
        super().__init__(f"missing column: {column}")
        self.column = column


class RowParseError(ValueError):
    def __init__(self, line: int, column: str, value: str):
        super().__init__(f"line {line}: cannot parse {column}={value!r}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class KpmRecord:
    timestamp: int
    ue_id: str
    features: tuple[float, ...]
    label: int
    day_index: int = 0

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {len(self.features)}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature value")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURES, self.features))


def iter_records(frame: pd.DataFrame) -> Iterator[KpmRecord]:
    feats = frame[list(FEATURES)].to_numpy(float)
    for i, row in enumerate(frame.itertuples(index=False)):
        yield KpmRecord(int(row.timestamp), str(row.ue_id), tuple(feats[i]),
                        int(row.label), int(row.day))


def records_to_frame(records: Sequence[KpmRecord]) -> pd.DataFrame:
    rows = [
        {"timestamp": r.timestamp, "ue_id": r.ue_id, **r.as_dict(),
         "label": r.label, "day": r.day_index}
        for r in records
    ]
    return _finish_frame(pd.DataFrame(rows, columns=list(CSV_COLUMNS)))


def _finish_frame(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.astype({"timestamp": "int64", "ue_id": str, "label": "int64", "day": "int64"})
    frame = frame.astype({f: "float64" for f in FEATURES})
    return frame.sort_values(["ue_id", "timestamp"], kind="mergesort").reset_index(drop=True)


@dataclass
class LoadResult:
    records: pd.DataFrame
    dropped: int
    has_labels: bool = True


def load_kpm_csv(path: str | Path, schema: Mapping[str, str] | None = None,
                 labels_optional: bool = False) -> LoadResult:
    """Read a KPM CSV, drop rows with missing features, sort by (ue_id, timestamp).

    ``schema`` maps canonical column names to the names used in the file.
    A ``day`` column is optional and defaults to 0. With ``labels_optional``
    a missing ``label`` column is filled with 0 and ``has_labels`` is False.
    """
    schema = dict(schema or {})
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    renamed = {schema.get(c, c): c for c in CSV_COLUMNS}
    raw = raw.rename(columns=renamed)
    has_labels = "label" in raw.columns
    for col in CSV_COLUMNS:
        if col not in raw.columns:
            if col == "day" or (col == "label" and labels_optional):
                raw[col] = "0"
                continue
            raise SchemaError(col)

    out = pd.DataFrame({"ue_id": raw["ue_id"].str.strip()})
    missing = np.zeros(len(raw), dtype=bool)
    for col in ("timestamp", *FEATURES, "label", "day"):
        text = raw[col].str.strip()
        values = pd.to_numeric(text, errors="coerce")
        is_nan_token = text.isin(_NAN_TOKENS)
        bad = values.isna() & ~is_nan_token
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            # header is line 1
            raise RowParseError(i + 2, col, raw[col].iloc[i])
        if col in FEATURES:
            missing |= values.isna().to_numpy() | ~np.isfinite(values.fillna(0).to_numpy())
        elif values.isna().any():
            i = int(np.flatnonzero(values.isna().to_numpy())[0])
            raise RowParseError(i + 2, col, raw[col].iloc[i])
        out[col] = values
    bad_label = ~out["label"].isin([0, 1])
    if bad_label.any():
        i = int(np.flatnonzero(bad_label.to_numpy())[0])
        raise RowParseError(i + 2, "label", raw["label"].iloc[i])

    dropped = int(missing.sum())
    if dropped:
        log.info("dropped %d rows with missing feature values", dropped)
    out = out.loc[~missing, list(CSV_COLUMNS)]
    return LoadResult(_finish_frame(out), dropped, has_labels)


def write_kpm_csv(frame: pd.DataFrame, path: str | Path) -> None:
    frame.loc[:, list(CSV_COLUMNS)].to_csv(path, index=False, float_format="%.6f")


# -- class statistics ---------------------------------------------------------

@dataclass(frozen=True)
class FeatureStats:
    """Per-class mean/std for each feature, indexed in :data:`FEATURES` order."""

    normal_mean: np.ndarray
    normal_std: np.ndarray
    attack_mean: np.ndarray
    attack_std: np.ndarray

    @property
    def pct_diff(self) -> np.ndarray:
        """(attack_mean - normal_mean) / |normal_mean| * 100."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.attack_mean - self.normal_mean) / np.abs(self.normal_mean) * 100.0

    def row(self, feature: str) -> tuple[float, float, float, float]:
        i = FEATURES.index(feature)
        return (float(self.normal_mean[i]), float(self.normal_std[i]),
                float(self.attack_mean[i]), float(self.attack_std[i]))

    def to_dict(self) -> dict:
        return {f: dict(zip(("normal_mean", "normal_std", "attack_mean", "attack_std"), self.row(f)))
                for f in FEATURES}

    @classmethod
    def from_dict(cls, d: Mapping[str, Mapping[str, float]]) -> "FeatureStats":
        cols = {k: np.array([float(d[f][k]) for f in FEATURES])
                for k in ("normal_mean", "normal_std", "attack_mean", "attack_std")}
        return cls(**cols)


@dataclass(frozen=True)
class ClassStats:
    """Statistics in raw units and after MinMax scaling."""

    raw: FeatureStats
    normalized: FeatureStats | None = None


def _stats_from_arrays(x: np.ndarray, y: np.ndarray) -> FeatureStats:
    normal, attack = x[y == 0], x[y == 1]
    if len(normal) == 0 or len(attack) == 0:
        raise ValueError("missing class: both benign and malicious records are required")
    # population std, matching a plain per-column describe of the corpus
    return FeatureStats(normal.mean(0), normal.std(0), attack.mean(0), attack.std(0))


def compute_class_stats(records: pd.DataFrame, scaler: "Scaler | None" = None) -> ClassStats:
    x = records[list(FEATURES)].to_numpy(float)
    y = records["label"].to_numpy()
    raw = _stats_from_arrays(x, y)
    norm = _stats_from_arrays(scaler.transform(x), y) if scaler is not None else None
    return ClassStats(raw, norm)


# -- scaling -------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    min: np.ndarray
    max: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Scale the trailing feature axis into [0, 1]; constant columns map to 0."""
        x = np.asarray(x, dtype=float)
        span = self.max - self.min
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (x - self.min) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scaler":
        return cls(np.asarray(d["min"], float), np.asarray(d["max"], float))


def _feature_matrix(data) -> np.ndarray:
    if isinstance(data, pd.DataFrame):
        return data[list(FEATURES)].to_numpy(float)
    arr = np.asarray(data, dtype=float)
    return arr.reshape(-1, arr.shape[-1])


def fit_scaler(train) -> Scaler:
    """Fit per-feature min/max on training records (DataFrame) or an array (..., 14)."""
    x = _feature_matrix(train)
    if x.size == 0:
        raise ValueError("cannot fit a scaler on empty input")
    return Scaler(x.min(axis=0), x.max(axis=0))


def apply_scaler(scaler: Scaler, records: pd.DataFrame) -> pd.DataFrame:
    out = records.copy()
    out[list(FEATURES)] = scaler.transform(records[list(FEATURES)].to_numpy(float))
    return out


# -- windowing -----------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    values: np.ndarray
    label: int
    ue_id: str
    start_timestamp: int

    @property
    def length(self) -> int:
        return self.values.shape[0]


@dataclass
class WindowSet:
    """Columnar collection of windows: ``values`` has shape (n, W, 14)."""

    values: np.ndarray
    labels: np.ndarray
    ue_ids: np.ndarray
    start_timestamps: np.ndarray
    days: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.values)
        if self.days is None:
            self.days = np.zeros(n, dtype=np.int64)
        if not (len(self.labels) == len(self.ue_ids) == len(self.start_timestamps) == len(self.days) == n):
            raise ValueError("window columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> Window:
        return Window(self.values[i], int(self.labels[i]), str(self.ue_ids[i]),
                      int(self.start_timestamps[i]))

    @property
    def window_length(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.values[idx], self.labels[idx], self.ue_ids[idx],
                         self.start_timestamps[idx], self.days[idx])

    def scaled(self, scaler: Scaler) -> "WindowSet":
        return WindowSet(scaler.transform(self.values), self.labels, self.ue_ids,
                         self.start_timestamps, self.days)

    @classmethod
    def empty(cls, window: int) -> "WindowSet":
        return cls(np.zeros((0, window, N_FEATURES)), np.zeros(0, np.int64),
                   np.zeros(0, dtype=object), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(np.concatenate([p.values for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.ue_ids for p in parts]),
                   np.concatenate([p.start_timestamps for p in parts]),
                   np.concatenate([p.days for p in parts]))


def contiguous_runs(timestamps: np.ndarray, period: float = SAMPLING_PERIOD,
                    gap_factor: float = GAP_FACTOR) -> list[tuple[int, int]]:
    """Half-open index ranges of samples whose successive gaps are <= gap_factor * period."""
    if len(timestamps) == 0:
        return []
    breaks = np.flatnonzero(np.diff(timestamps) > gap_factor * period) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(timestamps)]])
    return list(zip(starts.tolist(), ends.tolist()))


def make_windows(records: pd.DataFrame, window: int = 3, stride: int = 1,
                 period: float = SAMPLING_PERIOD) -> WindowSet:
    """Slide a length-``window`` window over each UE's contiguous runs.

    The window label is the label of its last timestep.
    """
    if window < 1:
        raise ValueError("window length must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    records = records.sort_values(["ue_id", "timestamp"], kind="mergesort")
    vals, labels, ues, starts, days = [], [], [], [], []
    for ue, grp in records.groupby("ue_id", sort=True):
        ts = grp["timestamp"].to_numpy(np.int64)
        x = grp[list(FEATURES)].to_numpy(float)
        y = grp["label"].to_numpy(np.int64)
        d = grp["day"].to_numpy(np.int64)
        for a, b in contiguous_runs(ts, period):
            if b - a < window:
                continue
            idx = np.arange(a, b - window + 1, stride)
            vals.append(np.lib.stride_tricks.sliding_window_view(x[a:b], window, axis=0)
                        .transpose(0, 2, 1)[:: stride])
            labels.append(y[idx + window - 1])
            starts.append(ts[idx])
            days.append(d[idx + window - 1])
            ues.append(np.full(len(idx), ue, dtype=object))
    if not vals:
        return WindowSet.empty(window)
    return WindowSet(np.ascontiguousarray(np.concatenate(vals)), np.concatenate(labels),
                     np.concatenate(ues), np.concatenate(starts), np.concatenate(days))


def split_train_test(windows: WindowSet, train_fraction: float = 0.8,
                     seed: int = 0) -> tuple[WindowSet, WindowSet]:
    """Stratified shuffle split; each class is split at ``train_fraction`` independently."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if len(windows) == 0:
        raise ValueError("cannot split an empty window set")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in np.unique(windows.labels):
        idx = rng.permutation(np.flatnonzero(windows.labels == cls))
        k = int(round(train_fraction * len(idx)))
        if len(idx) >= 2:
            k = min(max(k, 1), len(idx) - 1)
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return windows.subset(tr), windows.subset(te)


@dataclass
class ReplaySet:
    windows: WindowSet
    n_replayed: int
    truncated: bool


def build_replay_trainset(new_day: WindowSet, pool: WindowSet | None, ratio: float,
                          seed: int = 0) -> ReplaySet:
    """New-day windows plus floor(ratio * |new_day|) windows drawn from the past pool."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    want = int(np.floor(ratio * len(new_day) + 1e-9))
    if pool is None or len(pool) == 0 or want == 0:
        return ReplaySet(new_day, 0, truncated=want > 0)
    truncated = want > len(pool)
    take = min(want, len(pool))
    if truncated:
        log.warning("replay pool has %d windows, %d requested; using the whole pool", len(pool), want)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=take, replace=False)
    return ReplaySet(WindowSet.concat([new_day, pool.subset(np.sort(idx))]), take, truncated)
