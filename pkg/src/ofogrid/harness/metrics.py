"""Voltage quality metrics on post-warm-up voltage magnitudes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("variance", "range", "violation")


class MetricsError(ValueError):
    pass


@dataclass
class Metrics:
    """Per-entry and aggregate voltage statistics.

    ``variance`` is the population variance of magnitudes (p.u.^2),
    ``range`` is max - min (p.u.), ``violation`` sums the magnitude excess
    beyond the limits over steps (p.u. * steps). Aggregates: mean variance,
    largest range and summed violation across entries.
    """

    labels: list[str]
    variance: np.ndarray
    range: np.ndarray
    violation: np.ndarray
    warmup_s: float
    n_samples: int
    focus: str | None = None

    def entry(self, label: str) -> dict[str, float]:
        i = self.labels.index(label)
        return {m: float(getattr(self, m)[i]) for m in METRIC_NAMES}

    @property
    def aggregate(self) -> dict[str, float]:
        return {
            "variance": float(self.variance.mean()),
            "range": float(self.range.max()),
            "violation": float(self.violation.sum()),
        }

    @property
    def headline(self) -> dict[str, float]:
        """Focus-entry metrics when a focus is set, else the aggregate."""
        return self.entry(self.focus) if self.focus else self.aggregate


def violation_series(v, v_min: float = 0.95, v_max: float = 1.05) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.maximum(v - v_max, 0.0) + np.maximum(v_min - v, 0.0)


def magnitude_metrics(v, v_min: float = 0.95, v_max: float = 1.05):
    """``(variance, range, violation)`` along axis 0 of magnitudes ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] == 0:
        raise MetricsError("no samples to evaluate")
    return v.var(axis=0), v.max(axis=0) - v.min(axis=0), violation_series(v, v_min, v_max).sum(axis=0)


def compute_metrics(result, warmup_s: float) -> Metrics:
    """Metrics of a :class:`SimResult` after dropping the first ``warmup_s`` seconds."""
    duration = result.n_steps * result.dt
    if warmup_s < 0:
        raise MetricsError("warm-up must be non-negative")
    if warmup_s >= duration:
        raise MetricsError(f"warm-up {warmup_s} s leaves nothing of a {duration} s run")
    start = int(round(warmup_s / result.dt))
    v = result.v[start:]
    lo, hi = result.voltage_limits
    var, rng, viol = magnitude_metrics(v, lo, hi)
    return Metrics(
        labels=list(result.labels),
        variance=var,
        range=rng,
        violation=viol,
        warmup_s=float(warmup_s),
        n_samples=v.shape[0],
        focus=result.focus if result.focus in result.labels else None,
    )
