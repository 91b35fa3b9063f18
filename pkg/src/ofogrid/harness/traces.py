"""Data-center disturbance traces: file ingestion and a seeded generator."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TraceError(ValueError):
    pass


@dataclass
class DisturbanceTrace:
    """Active power of one data center (MW), one sample per control step."""

    power_mw: np.ndarray
    dt: float
    unit: str = "MW"

    def __len__(self) -> int:
        return self.power_mw.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.power_mw.size) * self.dt

    def reactive_mvar(self, power_factor: float) -> np.ndarray:
        return reactive_from_power_factor(self.power_mw, power_factor)

    def fitted(self, n_steps: int) -> "DisturbanceTrace":
        """Repeat (wrap) or truncate to exactly ``n_steps`` samples."""
        reps = -(-n_steps // self.power_mw.size)
        return DisturbanceTrace(np.tile(self.power_mw, reps)[:n_steps], self.dt, self.unit)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.power_mw, dtype="<f8").tobytes()).hexdigest()


def reactive_from_power_factor(p, power_factor: float):
    if not 0 < power_factor <= 1:
        raise TraceError(f"power factor must lie in (0, 1], got {power_factor}")
    return np.asarray(p, dtype=float) * math.tan(math.acos(power_factor))


def rescale(values, range_min: float, range_max: float) -> np.ndarray:
    """Affine map sending the sample min to ``range_min`` and max to ``range_max``."""
    if not range_min < range_max:
        raise TraceError(f"need range_min < range_max, got {range_min}, {range_max}")
    x = np.asarray(values, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        raise TraceError("constant trace cannot be normalized (min == max)")
    out = range_min + (x - lo) * ((range_max - range_min) / (hi - lo))
    # pin the extremes exactly despite rounding
    out[x == lo] = range_min
    out[x == hi] = range_max
    return out


_UNITS = {"w": 1e-6, "kw": 1e-3, "mw": 1.0}


def _parse_header(line: str) -> tuple[bool, str]:
    """``(has_time_column, unit)`` from the header line.

    Accepted forms: ``power_kw``, ``time_s,power_w``, ``# unit: W`` ...
    """
    text = line.strip().lstrip("#").strip().lower()
    tokens = [t for t in text.replace(";", ",").replace("\t", ",").split(",") if t.strip()]
    if not tokens:
        raise TraceError("trace header line is empty")
    if text.startswith("unit"):
        unit = text.split(":", 1)[-1].strip()
        return False, unit
    has_time = len(tokens) >= 2 and tokens[0].strip().startswith("t")
    name = tokens[-1].strip()
    unit = name.rsplit("_", 1)[-1] if "_" in name else name
    return has_time, unit


def read_trace_file(path: str | Path) -> tuple[np.ndarray | None, np.ndarray, str]:
    """Parse a delimited trace file into ``(times or None, values, unit)``."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise TraceError(f"{path}: empty trace (need a header and at least one sample)")
    has_time, unit = _parse_header(lines[0])
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if ln.lstrip().startswith("#"):
            continue
        parts = [p for p in ln.replace(";", ",").replace("\t", ",").split(",") if p.strip()]
        if len(parts) == 1 and not has_time:
            parts = ln.split()
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise TraceError(f"{path}:{lineno}: non-numeric sample {ln.strip()!r}") from None
        if len(rows[-1]) != (2 if has_time else 1):
            raise TraceError(f"{path}:{lineno}: expected {2 if has_time else 1} columns")
    if not rows:
        raise TraceError(f"{path}: no samples")
    arr = np.array(rows)
    if has_time:
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise TraceError(f"{path}: timestamps must be strictly increasing")
        return arr[:, 0], arr[:, 1], unit
    return None, arr[:, 0], unit


def zero_order_hold(times, values, dt: float) -> np.ndarray:
    """Sample a step signal at ``0, dt, 2 dt, ...`` up to the last timestamp."""
    times = np.asarray(times, dtype=float) - float(times[0])
    n = int(math.floor(times[-1] / dt + 1e-9)) + 1
    grid = np.arange(n) * dt
    idx = np.searchsorted(times, grid + 1e-9 * dt, side="right") - 1
    return np.asarray(values, dtype=float)[idx]


def load_trace(
    source: str | Path,
    range_min_mw: float,
    range_max_mw: float,
    dt: float,
) -> DisturbanceTrace:
    """Read a trace file, rescale it to ``[range_min_mw, range_max_mw]`` and resample.

    Without a time column each sample is taken to be one control step.
    """
    times, values, _ = read_trace_file(source)
    if times is not None:
        values = zero_order_hold(times, values, dt)
    return DisturbanceTrace(rescale(values, range_min_mw, range_max_mw), dt)


@dataclass
class SynthSpec:
    """Bursty piecewise-constant trace: geometric dwell, uniform levels."""

    seed: int
    range_mw: tuple[float, float] = (1.0, 4.0)
    dwell_mean_s: float = 5.0
    duration_s: float = 1800.0
    dt: float = 0.1
    jitter: float = 0.0  # std of per-sample noise, fraction of the range


def synth_trace(spec: SynthSpec) -> DisturbanceTrace:
    lo, hi = spec.range_mw
    if not lo < hi:
        raise TraceError("synthetic range must satisfy min < max")
    n = int(round(spec.duration_s / spec.dt))
    rng = np.random.default_rng(spec.seed)
    switch_p = 0.0 if math.isinf(spec.dwell_mean_s) else min(1.0, spec.dt / spec.dwell_mean_s)
    out = np.empty(n)
    pos = 0
    while pos < n:
        level = rng.uniform(lo, hi)
        dwell = n - pos if switch_p == 0.0 else int(rng.geometric(switch_p))
        out[pos : pos + dwell] = level
        pos += dwell
    if spec.jitter > 0:
        out += rng.normal(0.0, spec.jitter * (hi - lo), n)
        np.clip(out, lo, hi, out=out)
    return DisturbanceTrace(out, spec.dt)


def write_trace(trace: DisturbanceTrace, path: str | Path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,power_mw\n")
        for t, p in zip(trace.times, trace.power_mw):
            fh.write(f"{t:.6f},{p:.12g}\n")
