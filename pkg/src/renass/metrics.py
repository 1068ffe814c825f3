"""Operational availability A0 = MUT / (MUT + MDT) and trace comparisons."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError, UndefinedMetricError


class TimeCounters(NamedTuple):
    OT: int = 0
    ST: int = 0
    TCM: int = 0
    TPM: int = 0

    @property
    def MUT(self) -> int:
        return self.OT + self.ST

    @property
    def MDT(self) -> int:
        return self.TCM + self.TPM

    @property
    def total(self) -> int:
        return self.MUT + self.MDT


def operational_availability(c: TimeCounters) -> float:
    c = TimeCounters(*c)
    if min(c) < 0:
        raise ValueError(f"negative counter in {c}")
    if c.total == 0:
        raise UndefinedMetricError("A0 is undefined when no time has been observed")
    return c.MUT / c.total


class AvailabilityPoint(NamedTuple):
    tick: int
    per_business: tuple[float, ...]
    system: float


def _series_from_counters(counters: np.ndarray, window: int | None) -> np.ndarray:
    """(T, B, 4) cumulative counters -> (T, B) A0, cumulative or over a trailing window."""
    if window is not None:
        if window < 1:
            raise ValueError("window must be >= 1")
        lagged = np.zeros_like(counters)
        lagged[window:] = counters[:-window]
        counters = counters - lagged
    up = counters[..., 0] + counters[..., 1]
    total = counters.sum(axis=-1)
    if (total == 0).any():
        raise UndefinedMetricError("a tick with no observed time")
    return up / total


def availability_series(trace, window: int | None = None) -> list[AvailabilityPoint]:
    """One point per tick; point t uses counters accumulated through tick t.

    With ``window`` set, each point only counts the trailing ``window`` ticks.
    """
    counters = np.asarray(trace.counters)
    if counters.ndim != 3 or counters.shape[0] == 0:
        raise UndefinedMetricError("empty trace")
    per = _series_from_counters(counters, window)
    system = per.mean(axis=1)
    return [AvailabilityPoint(t + 1, tuple(per[t].tolist()), float(system[t])) for t in range(per.shape[0])]


@dataclass(frozen=True)
class ComparisonReport:
    reconfig: np.ndarray
    baseline: np.ndarray
    gap: np.ndarray
    min_gap: float
    gap_trend: float

    @property
    def ticks(self) -> np.ndarray:
        return np.arange(1, len(self.gap) + 1)


def gap_trend(gap: np.ndarray) -> float:
    """Mean gap over the second half of the horizon minus mean over the first half."""
    gap = np.asarray(gap, dtype=float)
    half = len(gap) // 2
    if half == 0:
        return 0.0
    return float(gap[half:].mean() - gap[:half].mean())


def compare_series(reconfig, baseline) -> ComparisonReport:
    a = np.asarray(reconfig, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"series shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise UndefinedMetricError("empty series")
    gap = a - b
    return ComparisonReport(a, b, gap, float(gap.min()), gap_trend(gap))


def compare(reconfig, baseline) -> ComparisonReport:
    """Per-tick system A0 of two traces side by side, plus gap statistics."""
    if tuple(reconfig.business_ids) != tuple(baseline.business_ids):
        raise ShapeError("traces cover different businesses")
    if reconfig.counters.shape != baseline.counters.shape:
        raise ShapeError(f"horizons differ: {reconfig.counters.shape[0]} vs {baseline.counters.shape[0]}")
    return compare_series(reconfig.system_a0, baseline.system_a0)
