"""Volt/VAR-style incremental PI benchmark controller.

Each battery reads only its own bus voltage magnitude (p.u., not squared;
multi-phase batteries average their phases). Two inputs, each with a
deadband and saturation,

* fluctuation ``dv = sgn(v_prev - v) * clip(|v_prev - v| - d/2, 0, dv_max - d/2)``
* deviation   ``ev = sgn(v_set - v)  * clip(|v_set - v|  - d/2, 0, ev_max - d/2)``

are blended into one signal ``u = theta*dv/dv_max + (1-theta)*ev/ev_max`` that
increments the setpoints, ``p += alpha*rho*u*s_max`` and
``q += (1-alpha)*rho*u*s_max``. The increment is the same on every phase of
a battery. Active power is clipped to ``[-s_max, s_max]`` first, then
reactive power to whatever apparent power remains.

SoC is never consulted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BenchmarkConfig:
    deadband: float = 0.01
    dv_max: float = 0.02
    ev_max: float = 0.05
    v_set: float = 1.0
    alpha: float = 0.5
    theta: float = 0.5
    rho: float = 0.05

    def validate(self) -> None:
        if not self.deadband < 2 * min(self.dv_max, self.ev_max):
            raise ValueError("deadband must be narrower than twice the saturation points")
        if self.deadband < 0:
            raise ValueError("deadband must be non-negative")
        for name in ("alpha", "theta"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


@dataclass
class BenchmarkState:
    p_hat: np.ndarray  # per battery phase, before projection
    q_hat: np.ndarray
    v_prev: np.ndarray | None = None  # per battery, magnitude


def _shaped(err, half_band: float, cap: float):
    return np.sign(err) * np.clip(np.abs(err) - half_band, 0.0, cap - half_band)


def deadband_inputs(v, v_prev, config: BenchmarkConfig):
    """``(fluctuation, deviation)`` inputs for local voltage magnitude ``v``."""
    half = config.deadband / 2.0
    v = np.asarray(v, dtype=float)
    fluct = _shaped(np.asarray(v_prev, dtype=float) - v, half, config.dv_max)
    dev = _shaped(config.v_set - v, half, config.ev_max)
    return fluct, dev


def pi_update(p_hat_prev, q_hat_prev, fluct, dev, config: BenchmarkConfig, s_max):
    """Incremented (unprojected) setpoints."""
    u = config.theta * fluct / config.dv_max + (1.0 - config.theta) * dev / config.ev_max
    step = config.rho * u * s_max
    return p_hat_prev + config.alpha * step, q_hat_prev + (1.0 - config.alpha) * step


def sequential_project(p_hat, q_hat, s_max):
    """Clip ``p`` to the rating, then ``q`` to the remaining apparent power."""
    s_max = np.asarray(s_max, dtype=float)
    p = np.clip(p_hat, -s_max, s_max)
    q_lim = np.sqrt(np.maximum(s_max**2 - p**2, 0.0))
    return p, np.clip(q_hat, -q_lim, q_lim)


class BenchmarkController:
    """Benchmark controller for a fleet whose phase ``k`` belongs to battery ``owner[k]``."""

    def __init__(self, config: BenchmarkConfig, owner, s_max, local_rows):
        """``local_rows[n]``: voltage rows averaged for battery ``n``."""
        config.validate()
        self.config = config
        self.owner = np.asarray(owner, dtype=int)
        self.s_max = np.asarray(s_max, dtype=float)
        self.local_rows = [np.asarray(r, dtype=int) for r in local_rows]

    def initial_state(self) -> BenchmarkState:
        n = self.owner.size
        return BenchmarkState(np.zeros(n), np.zeros(n))

    def local_voltage(self, v2) -> np.ndarray:
        mag = np.sqrt(np.asarray(v2, dtype=float))
        return np.array([mag[rows].mean() for rows in self.local_rows])

    def step(self, state: BenchmarkState, v2, e=None) -> tuple[BenchmarkState, np.ndarray, np.ndarray]:
        """Advance from squared-voltage measurement ``v2``; ``e`` is ignored."""
        v_loc = self.local_voltage(v2)
        v_prev = v_loc if state.v_prev is None else state.v_prev
        fluct, dev = deadband_inputs(v_loc, v_prev, self.config)
        p_hat, q_hat = pi_update(
            state.p_hat,
            state.q_hat,
            fluct[self.owner],
            dev[self.owner],
            self.config,
            self.s_max,
        )
        p, q = sequential_project(p_hat, q_hat, self.s_max)
        return BenchmarkState(p_hat, q_hat, v_loc), p, q
