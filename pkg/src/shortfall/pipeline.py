"""Windowing, labeling, normalization, and dataset persistence.

A lane is one (site, plant, part) delivery agreement with a daily history
over the 21-column feature schema below. Lanes are segmented into 28-day
windows on a weekly stride, each labeled with the observed days-to-shortfall
(censored at the horizon token), normalized with train-split min/max stats,
and split train/validation by lane so no lane leaks across the split.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SchemaError, ValidationError
from .survival import ObservedOutcome

FEATURES = [
    "APPC", "APW", "MPPC", "MPW", "cum_release", "days_behind_release",
    "production_usage", "qt_behind_release", "qt_boh_arrived",
    "qt_prt_boh_loose", "qt_boh_proj", "qt_boh_warehouses",
    "qt_boh_days_arriv", "qt_boh_days_loose", "qt_boh_days_proj",
    "qt_p_y_in_transit", "qt_promised", "qt_release", "qt_supp_cum_rcpt",
    "qt_supp_in_transit", "qt_trans_days_used",
]
NUM_FEATURES = len(FEATURES)
WINDOW_LEN = 28
DEFAULT_HORIZON = 366
DATASET_SCHEMA = "shortfall-dataset-v1"
LANES_SCHEMA = "shortfall-lanes-v1"

__all__ = [
    "FEATURES", "NUM_FEATURES", "WINDOW_LEN", "DEFAULT_HORIZON",
    "LaneKey", "LaneSeries", "WindowSample", "NormalizationStats", "Dataset",
    "segment_windows", "label_window", "fit_normalization",
    "apply_normalization", "build_dataset",
    "write_lanes", "read_lanes", "write_dataset", "read_dataset",
]


@dataclass(frozen=True)
class LaneKey:
    site: str
    plant: str
    part: str

    def __post_init__(self):
        if not (self.site and self.plant and self.part):
            raise ValidationError(f"lane key fields must be non-empty: {self}")


@dataclass
class LaneSeries:
    """One lane's daily feature history; day indices are 1-based."""
    key: LaneKey
    features: np.ndarray                    # (num_days, 21), finite, >= 0
    event_day: Optional[int] = None         # first shortfall day, if observed
    last_observed_day: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != NUM_FEATURES:
            raise ValidationError(
                f"lane features must have {NUM_FEATURES} columns, got {self.features.shape}")
        if not np.isfinite(self.features).all() or self.features.min() < 0:
            raise ValidationError("lane features must be finite and non-negative")
        if self.last_observed_day == 0:
            self.last_observed_day = self.features.shape[0]
        if self.last_observed_day > self.features.shape[0]:
            raise ValidationError("last_observed_day beyond recorded history")
        if self.event_day is not None and self.event_day > self.last_observed_day:
            raise ValidationError("event_day beyond last_observed_day")

    @property
    def num_days(self):
        return self.features.shape[0]


@dataclass
class WindowSample:
    key: LaneKey
    ids: np.ndarray                        # resolved (site, plant, part) integer ids
    window: np.ndarray                     # (28, 21), normalized
    outcome: ObservedOutcome
    end_day: int = 0

    @property
    def flat(self):
        """588-vector view in (day, feature) order."""
        return self.window.reshape(-1)


@dataclass
class NormalizationStats:
    mins: np.ndarray                       # (21,)
    maxs: np.ndarray                       # (21,)
    fingerprint: str = ""

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != (NUM_FEATURES,) or self.maxs.shape != (NUM_FEATURES,):
            raise ValidationError("normalization stats must cover all 21 features")
        if (self.maxs < self.mins).any():
            raise ValidationError("normalization max below min")

    def to_dict(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(),
                "fingerprint": self.fingerprint}

    @classmethod
    def from_dict(cls, d):
        return cls(mins=d["mins"], maxs=d["maxs"], fingerprint=d.get("fingerprint", ""))


def segment_windows(series, stride=7):
    """Sliding 28-day windows ending at days 28, 28+stride, ...

    Windows whose end day reaches the event day are excluded (the event
    already happened). Returns (list of (end_day, raw 28x21 window),
    warning_count) where warning_count is 1 for a too-short series.
    """
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    if series.num_days < WINDOW_LEN:
        return [], 1
    windows = []
    for end in range(WINDOW_LEN, series.last_observed_day + 1, stride):
        if series.event_day is not None and end >= series.event_day:
            break
        windows.append((end, series.features[end - WINDOW_LEN:end]))
    return windows, 0


def label_window(window_end, series, horizon=DEFAULT_HORIZON):
    """Observed (t, y) for a window ending at window_end.

    Event within horizon-1 days -> (gap, 1); event beyond -> censored at the
    horizon token; no event -> censored at remaining observation (capped at
    the token). Returns None when the remaining observation is empty (t < 1).
    """
    if series.event_day is not None:
        if window_end >= series.event_day:
            raise ValidationError("window extends past the event day")
        gap = series.event_day - window_end
        if gap <= horizon - 1:
            return ObservedOutcome(t=gap, y=1)
        return ObservedOutcome(t=horizon, y=0)
    remaining = series.last_observed_day - window_end
    if remaining < 1:
        return None
    return ObservedOutcome(t=min(remaining, horizon), y=0)


def fit_normalization(raw_windows, fingerprint=""):
    """Per-feature min/max pooled over all windows and days."""
    if not raw_windows:
        raise ValidationError("cannot fit normalization on zero windows")
    stacked = np.concatenate([np.asarray(w, dtype=np.float64) for w in raw_windows], axis=0)
    return NormalizationStats(mins=stacked.min(axis=0), maxs=stacked.max(axis=0),
                              fingerprint=fingerprint)


def apply_normalization(window, stats, clamp_counter=None):
    """(x - min) / (max - min) per feature; constant features map to 0.

    Out-of-range values clamp to [0, 1]; when clamp_counter (a one-element
    list) is given, the number of clamped cells is added to it.
    """
    w = np.asarray(window, dtype=np.float64)
    span = stats.maxs - stats.mins
    safe = np.where(span > 0, span, 1.0)
    normalized = (w - stats.mins) / safe
    normalized[:, span == 0] = 0.0
    clipped = np.clip(normalized, 0.0, 1.0)
    if clamp_counter is not None:
        clamp_counter[0] += int((clipped != normalized).sum())
    return clipped


@dataclass
class Dataset:
    train: list
    validation: list
    stats: NormalizationStats
    vocabularies: dict                       # "site"/"plant"/"part" -> {name: id}
    summary: dict = field(default_factory=dict)

    def normalization_dict(self):
        return self.stats.to_dict()


def _build_vocab(values):
    """Dense ids with 0 reserved for unknown; sorted for determinism."""
    return {name: i + 1 for i, name in enumerate(sorted(set(values)))}


def build_dataset(lanes, stride=7, split_seed=0, val_fraction=0.1,
                  horizon=DEFAULT_HORIZON):
    """Segment, label, split by lane, and normalize with train-only stats."""
    lanes = list(lanes)
    if not lanes:
        raise ValidationError("no lanes supplied")
    keys = [lane.key for lane in lanes]
    if len(set(keys)) != len(keys):
        raise ValidationError("duplicate lane keys")

    rng = np.random.default_rng(split_seed)
    order = rng.permutation(len(lanes))
    n_val = int(round(len(lanes) * val_fraction))
    val_idx = set(int(i) for i in order[:n_val])

    vocab = {
        "site": _build_vocab(k.site for k in keys),
        "plant": _build_vocab(k.plant for k in keys),
        "part": _build_vocab(k.part for k in keys),
    }

    raw = {"train": [], "val": []}
    warnings = 0
    for i, lane in enumerate(lanes):
        windows, warn = segment_windows(lane, stride=stride)
        warnings += warn
        split = "val" if i in val_idx else "train"
        ids = np.array([vocab["site"][lane.key.site], vocab["plant"][lane.key.plant],
                        vocab["part"][lane.key.part]], dtype=np.intp)
        for end, w in windows:
            outcome = label_window(end, lane, horizon=horizon)
            if outcome is None:
                continue
            raw[split].append((lane.key, ids, end, w, outcome))
    if not raw["train"]:
        raise ValidationError("all lanes too short to produce training windows")

    stats = fit_normalization([w for *_k, w, _o in raw["train"]],
                              fingerprint=f"lanes={len(lanes)} stride={stride} seed={split_seed}")
    clamp_counter = [0]
    splits = {}
    for name, items in raw.items():
        samples = []
        for key, ids, end, w, outcome in items:
            norm = apply_normalization(w, stats, clamp_counter)
            samples.append(WindowSample(key=key, ids=ids, window=norm,
                                        outcome=outcome, end_day=end))
        splits[name] = samples

    all_samples = splits["train"] + splits["val"]
    censored = sum(1 for s in all_samples if s.outcome.y == 0)
    summary = {
        "lanes": len(lanes),
        "train_samples": len(splits["train"]),
        "validation_samples": len(splits["val"]),
        "censoring_proportion": censored / max(len(all_samples), 1),
        "short_series_warnings": warnings,
        "clamped_cells": clamp_counter[0],
        "stride": stride,
        "horizon": horizon,
    }
    return Dataset(train=splits["train"], validation=splits["val"], stats=stats,
                   vocabularies=vocab, summary=summary)


# ------------------------------------------------------------------ file IO

def write_lanes(lanes, path):
    """Line-delimited lane records; first line is the schema header."""
    with open(path, "w") as f:
        f.write(json.dumps({"schema": LANES_SCHEMA, "features": FEATURES}) + "\n")
        for lane in lanes:
            record = {
                "site": lane.key.site, "plant": lane.key.plant, "part": lane.key.part,
                "event_day": lane.event_day,
                "last_observed_day": lane.last_observed_day,
                "features": lane.features.tolist(),
            }
            f.write(json.dumps(record) + "\n")


def _read_lines(path, schema):
    with open(path) as f:
        lines = f.readlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:1: malformed header: {e}") from e
    if header.get("schema") != schema:
        raise SchemaError(f"{path}:1: expected schema {schema!r}, got {header.get('schema')!r}")
    return header, lines[1:]


def read_lanes(path):
    header, lines = _read_lines(path, LANES_SCHEMA)
    if header.get("features") != FEATURES:
        raise SchemaError(f"{path}:1: feature column order does not match the schema")
    lanes = []
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            lanes.append(LaneSeries(
                key=LaneKey(rec["site"], rec["plant"], rec["part"]),
                features=np.asarray(rec["features"], dtype=np.float64),
                event_day=rec["event_day"],
                last_observed_day=rec["last_observed_day"],
            ))
        except (KeyError, json.JSONDecodeError, ValidationError) as e:
            raise SchemaError(f"{path}:{lineno}: {e}") from e
    return lanes


def write_dataset(dataset, path):
    """Line-delimited window samples plus stats, vocab, and summary header."""
    with open(path, "w") as f:
        header = {
            "schema": DATASET_SCHEMA,
            "features": FEATURES,
            "stats": dataset.stats.to_dict(),
            "vocabularies": dataset.vocabularies,
            "summary": dataset.summary,
        }
        f.write(json.dumps(header) + "\n")
        for split in ("train", "validation"):
            for s in getattr(dataset, split):
                record = {
                    "split": split,
                    "site": s.key.site, "plant": s.key.plant, "part": s.key.part,
                    "ids": [int(i) for i in s.ids],
                    "end_day": s.end_day,
                    "t": s.outcome.t, "y": s.outcome.y,
                    "window": s.window.tolist(),
                }
                f.write(json.dumps(record) + "\n")


def read_dataset(path):
    header, lines = _read_lines(path, DATASET_SCHEMA)
    if header.get("features") != FEATURES:
        raise SchemaError(f"{path}:1: feature column order does not match the schema")
    splits = {"train": [], "validation": []}
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            window = np.asarray(rec["window"], dtype=np.float64)
            if window.shape != (WINDOW_LEN, NUM_FEATURES):
                raise SchemaError(f"window shape {window.shape}")
            splits[rec["split"]].append(WindowSample(
                key=LaneKey(rec["site"], rec["plant"], rec["part"]),
                ids=np.asarray(rec["ids"], dtype=np.intp),
                window=window,
                outcome=ObservedOutcome(t=rec["t"], y=rec["y"]),
                end_day=rec["end_day"],
            ))
        except (KeyError, json.JSONDecodeError, ValidationError, SchemaError) as e:
            raise SchemaError(f"{path}:{lineno}: {e}") from e
    return Dataset(
        train=splits["train"], validation=splits["validation"],
        stats=NormalizationStats.from_dict(header["stats"]),
        vocabularies=header["vocabularies"],
        summary=header.get("summary", {}),
    )
