"""Cross-dataset logistic reward normalization.

Each (dataset, task) pair gets its own percentile statistics, fitted once from
baseline-model scores. A raw metric ``x`` is mapped to

    r = 1 / (1 + exp(-k * (x - p50) / IQR))

so a response at the pair's median earns exactly 0.5 regardless of how hard
the pair is.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .tasks import TaskKind

DEFAULT_K = 3.0
DEFAULT_IQR_FLOOR = 1e-3
MIN_FIT_SCORES = 4

CHANNELS = ("content", "similarity", "judge")

_LOW = sys.float_info.min
_HIGH = float(np.nextafter(1.0, 0.0))


class FittingError(ValueError):
    pass


class StatsInvariantError(ValueError):
    pass


class StatsFormatError(ValueError):
    pass


class StatsLookupError(KeyError):
    pass


@dataclass(frozen=True)
class PercentileStats:
    p25: float
    p50: float
    p75: float
    k: float = DEFAULT_K
    iqr_floor: float = DEFAULT_IQR_FLOOR

    def __post_init__(self):
        vals = (self.p25, self.p50, self.p75, self.k, self.iqr_floor)
        if not all(math.isfinite(float(v)) for v in vals):
            raise StatsInvariantError(f"non-finite percentile stats: {vals}")
        if not (self.p25 <= self.p50 <= self.p75):
            raise StatsInvariantError(
                f"percentiles out of order: p25={self.p25}, p50={self.p50}, p75={self.p75}"
            )
        if self.k <= 0:
            raise StatsInvariantError(f"slope k must be positive, got {self.k}")
        if self.iqr_floor <= 0:
            raise StatsInvariantError(f"iqr_floor must be positive, got {self.iqr_floor}")

    @property
    def iqr(self) -> float:
        """Effective interquartile range, floored to stay positive."""
        return max(self.p75 - self.p25, self.iqr_floor)

    def to_dict(self) -> dict:
        return {"p25": self.p25, "p50": self.p50, "p75": self.p75, "k": self.k, "iqr_floor": self.iqr_floor}


def fit_percentile_stats(
    scores: Iterable[float], k: float = DEFAULT_K, iqr_floor: float = DEFAULT_IQR_FLOOR
) -> PercentileStats:
    """Fit p25/p50/p75 by linear interpolation between order statistics."""
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size < MIN_FIT_SCORES:
        raise FittingError(f"need at least {MIN_FIT_SCORES} scores to fit percentiles, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise FittingError("scores contain non-finite values")
    p25, p50, p75 = np.percentile(arr, [25.0, 50.0, 75.0], method="linear")
    # interpolation can break ordering by an ulp on near-constant samples
    p50 = min(max(p50, p25), p75)
    return PercentileStats(float(p25), float(p50), float(p75), float(k), float(iqr_floor))


def _check_finite(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"raw metric must be finite, got {x!r}")
    return arr


def normalize(stats: PercentileStats, x):
    """Logistic map of a raw metric (scalar or array) into the open interval (0, 1)."""
    arr = _check_finite(x)
    z = stats.k * (arr - stats.p50) / stats.iqr
    with np.errstate(over="ignore"):
        r = 1.0 / (1.0 + np.exp(-z))
    # keep the open interval in floating point for saturated inputs
    r = np.clip(r, _LOW, _HIGH)
    return float(r) if r.ndim == 0 else r


def normalize_derivative(stats: PercentileStats, x):
    """d normalize / dx = (k / IQR) * r * (1 - r)."""
    r = normalize(stats, x)
    return (stats.k / stats.iqr) * r * (1.0 - r)


def _key(dataset: str, task, channel: str) -> tuple[str, TaskKind, str]:
    if channel not in CHANNELS:
        raise ValueError(f"unknown stats channel {channel!r}; expected one of {CHANNELS}")
    return (str(dataset), TaskKind.parse(task), channel)


@dataclass(frozen=True)
class StatsTable:
    """Frozen map of (dataset, task, channel) to percentile stats.

    ``channel`` is ``"content"`` for grounding metrics, and ``"similarity"`` or
    ``"judge"`` for the two caption reward channels.
    """

    entries: Mapping[tuple[str, TaskKind, str], PercentileStats] = field(default_factory=dict)
    k: float = DEFAULT_K

    def __post_init__(self):
        clean = {}
        for key, st in dict(self.entries).items():
            if len(key) == 2:
                key = (key[0], key[1], "content")
            clean[_key(*key)] = st
            if st.k != self.k:
                raise StatsInvariantError(
                    f"entry {key} has k={st.k} but the table slope is {self.k}; k is set per table"
                )
        object.__setattr__(self, "entries", clean)

    def get(self, dataset: str, task, channel: str = "content") -> PercentileStats:
        key = _key(dataset, task, channel)
        try:
            return self.entries[key]
        except KeyError:
            raise StatsLookupError(
                f"no percentile stats for dataset={key[0]!r} task={key[1].value} channel={channel}"
            ) from None

    def __contains__(self, key) -> bool:
        if len(key) == 2:
            key = (*key, "content")
        try:
            return _key(*key) in self.entries
        except ValueError:
            return False

    def __len__(self) -> int:
        return len(self.entries)

    def with_entry(self, dataset: str, task, stats: PercentileStats, channel: str = "content") -> "StatsTable":
        new = dict(self.entries)
        new[_key(dataset, task, channel)] = stats
        return StatsTable(new, self.k)


def fit_stats_table(
    rows: Iterable[tuple],
    k: float = DEFAULT_K,
    iqr_floor: float = DEFAULT_IQR_FLOOR,
) -> StatsTable:
    """Fit a table from ``(dataset, task, score)`` or ``(dataset, task, score, channel)`` rows."""
    groups: dict[tuple[str, TaskKind, str], list[float]] = {}
    for row in rows:
        dataset, task, score = row[0], row[1], row[2]
        channel = row[3] if len(row) > 3 and row[3] else "content"
        groups.setdefault(_key(dataset, task, channel), []).append(float(score))
    entries = {}
    for key, scores in groups.items():
        try:
            entries[key] = fit_percentile_stats(scores, k, iqr_floor)
        except FittingError as exc:
            raise FittingError(f"{key[0]}/{key[1].value}/{key[2]}: {exc}") from None
    return StatsTable(entries, k)


def save_stats_table(table: StatsTable, path) -> None:
    rows = []
    for (dataset, task, channel), st in sorted(table.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
        rows.append({"dataset": dataset, "task": task.value, "channel": channel, **st.to_dict()})
    doc = {"format": "medgrpo-stats/1", "k": table.k, "entries": rows}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


_REQUIRED = ("dataset", "task", "p25", "p50", "p75", "k", "iqr_floor")


def load_stats_table(path) -> StatsTable:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"stats table not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise StatsFormatError(f"{p}: not valid JSON ({exc})") from None
    if isinstance(doc, list):
        doc = {"entries": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise StatsFormatError(f"{p}: expected an object with an 'entries' list")
    entries = {}
    ks = set()
    for i, row in enumerate(doc["entries"]):
        if not isinstance(row, dict):
            raise StatsFormatError(f"{p}: entry {i} is not an object")
        missing = [f for f in _REQUIRED if f not in row]
        if missing:
            raise StatsFormatError(f"{p}: entry {i} missing fields {missing}")
        try:
            st = PercentileStats(
                float(row["p25"]), float(row["p50"]), float(row["p75"]), float(row["k"]), float(row["iqr_floor"])
            )
            key = _key(row["dataset"], row["task"], row.get("channel", "content"))
        except StatsInvariantError as exc:
            raise StatsInvariantError(f"{p}: entry {i}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise StatsFormatError(f"{p}: entry {i}: {exc}") from None
        if key in entries:
            raise StatsFormatError(f"{p}: duplicate entry for {key[0]}/{key[1].value}/{key[2]}")
        entries[key] = st
        ks.add(st.k)
    k = float(doc.get("k", ks.pop() if len(ks) == 1 else DEFAULT_K))
    return StatsTable(entries, k)
