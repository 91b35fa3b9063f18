"""Online feedback optimization (OFO) voltage controller.

Each control step runs projected dual ascent on the voltage and SoC limit
multipliers, an optional anti-windup revert, and one projected gradient step
on the battery setpoints::

    mu_lo  <- max(0, mu_lo + rho (v_min - v))        lam_lo <- max(0, lam_lo + rho (e_min - e))
    mu_hi  <- max(0, mu_hi + rho (v - v_max))        lam_hi <- max(0, lam_hi + rho (e - e_max))

    g_p = R^T C_vf (v - v_prev) + C_p p + R^T (mu_hi - mu_lo) + (de/dp)^T (lam_hi - lam_lo)
    g_q = X^T C_vf (v - v_prev) + C_q q + X^T (mu_hi - mu_lo) + (de/dq)^T (lam_hi - lam_lo)
    (p, q) <- project_disk(p - rho g_p, q - rho g_q, s_max)

``R``/``X`` are the battery-phase columns of the LinDist3Flow sensitivities
and ``v`` is the *measured* squared voltage, so the linear model only shapes
the gradient direction. With ``C_vf = I`` the smoothing term is the plain
``R^T (v - v_prev)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .feeder import FeederError, SensitivityModel
from .storage import BatteryFleet, soc_sensitivities


@dataclass
class OfoConfig:
    rho: float = 0.05
    c_vf: np.ndarray | float = 1.0
    c_p: np.ndarray | float = 0.01
    c_q: np.ndarray | float = 0.01
    v_min2: np.ndarray | float = 0.95**2
    v_max2: np.ndarray | float = 1.05**2
    e_min: np.ndarray | float = 0.0
    e_max: np.ndarray | float = np.inf
    anti_windup: bool = True
    soc_mode: str = "paper"
    soc_sensitivity: str = "exact"
    saturation_tol: float = 1e-9

    def validate(self) -> None:
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        # c_vf = 0 is allowed: it switches the smoothing objective off
        if np.any(np.asarray(self.c_vf) < 0):
            raise ValueError("c_vf must be non-negative")
        for name in ("c_p", "c_q"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")
        if np.any(np.asarray(self.v_min2) >= np.asarray(self.v_max2)):
            raise ValueError("need v_min < v_max elementwise")


@dataclass
class DualState:
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    mu_lo_prev: np.ndarray
    mu_hi_prev: np.ndarray

    @classmethod
    def zeros(cls, n_voltages: int, n_batteries: int) -> "DualState":
        z, zb = np.zeros(n_voltages), np.zeros(n_batteries)
        return cls(z, z.copy(), zb, zb.copy(), z.copy(), z.copy())


@dataclass
class OfoState:
    p: np.ndarray
    q: np.ndarray
    duals: DualState
    v_prev: np.ndarray | None = None


def dual_update(duals: DualState, v, e, config: OfoConfig) -> DualState:
    v = np.asarray(v, dtype=float)
    e = np.asarray(e, dtype=float)
    if v.shape != duals.mu_lo.shape:
        raise FeederError(f"voltage vector has shape {v.shape}, duals {duals.mu_lo.shape}")
    if e.shape != duals.lam_lo.shape:
        raise FeederError(f"SoC vector has shape {e.shape}, duals {duals.lam_lo.shape}")
    rho = config.rho
    return DualState(
        mu_lo=np.maximum(0.0, duals.mu_lo + rho * (config.v_min2 - v)),
        mu_hi=np.maximum(0.0, duals.mu_hi + rho * (v - config.v_max2)),
        lam_lo=np.maximum(0.0, duals.lam_lo + rho * (config.e_min - e)),
        lam_hi=np.maximum(0.0, duals.lam_hi + rho * (e - config.e_max)),
        mu_lo_prev=duals.mu_lo.copy(),
        mu_hi_prev=duals.mu_hi.copy(),
    )


def saturated(p, q, s_max, tol: float = 1e-9) -> np.ndarray:
    s2 = np.asarray(s_max, dtype=float) ** 2
    return np.abs(np.square(p) + np.square(q) - s2) <= tol * s2


def anti_windup(duals: DualState, p, q, s_max, sensed=None, tol: float = 1e-9) -> DualState:
    """Discard the latest voltage-dual update where the inverter is saturated.

    A battery phase on the disk boundary with ``p < 0, q < 0`` restores
    ``mu_hi``; with ``p > 0, q > 0`` it restores ``mu_lo``. ``sensed`` is a
    boolean (n_voltages, n_battery_phases) mask of the voltage entries each
    battery phase acts on; ``None`` means every entry. SoC duals are never
    touched.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    sat = saturated(p, q, s_max, tol)
    freeze_hi = sat & (p < 0) & (q < 0)
    freeze_lo = sat & (p > 0) & (q > 0)
    n = duals.mu_lo.size
    if sensed is None:
        sensed = np.ones((n, p.size), dtype=bool)
    hi_rows = sensed[:, freeze_hi].any(axis=1)
    lo_rows = sensed[:, freeze_lo].any(axis=1)
    if not (hi_rows.any() or lo_rows.any()):
        return duals
    return replace(
        duals,
        mu_hi=np.where(hi_rows, duals.mu_hi_prev, duals.mu_hi),
        mu_lo=np.where(lo_rows, duals.mu_lo_prev, duals.mu_lo),
    )


def primal_gradients(
    p, q, v, v_prev, duals: DualState, r_b, x_b, de_dp, de_dq, config: OfoConfig
):
    """Gradients of the partial Lagrangian with respect to ``p`` and ``q``.

    ``r_b``/``x_b``: (n_voltages, n_battery_phases) voltage sensitivities.
    ``de_dp``/``de_dq``: (n_batteries, n_battery_phases) SoC sensitivities.
    """
    r_b = np.atleast_2d(r_b)
    x_b = np.atleast_2d(x_b)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if r_b.shape[0] != v.size or x_b.shape != r_b.shape:
        raise FeederError(f"sensitivity shape {r_b.shape} does not match {v.size} voltages")
    smooth = np.asarray(config.c_vf) * (v - v_prev)
    dmu = duals.mu_hi - duals.mu_lo
    dlam = duals.lam_hi - duals.lam_lo
    g_p = r_b.T @ (smooth + dmu) + np.asarray(config.c_p) * p + np.atleast_2d(de_dp).T @ dlam
    g_q = x_b.T @ (smooth + dmu) + np.asarray(config.c_q) * q + np.atleast_2d(de_dq).T @ dlam
    return g_p, g_q


def project_disk(p, q, s_max):
    """Euclidean projection of each (p, q) pair onto ``p^2 + q^2 <= s_max^2``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mag = np.hypot(p, q)
    outside = mag > s_max
    scale = np.where(outside, s_max / np.where(outside, mag, 1.0), 1.0)
    return p * scale, q * scale


def primal_step_and_project(p, q, g_p, g_q, rho: float, s_max):
    return project_disk(p - rho * g_p, q - rho * g_q, s_max)


class OfoController:
    """OFO controller bound to a feeder sensitivity model and a battery fleet.

    ``battery_rows[k]`` is the voltage row of battery phase ``k``.
    """

    def __init__(
        self,
        sensitivity: SensitivityModel,
        fleet: BatteryFleet,
        battery_rows,
        config: OfoConfig,
        dt: float,
    ):
        config.validate()
        self.config = config
        self.fleet = fleet
        self.dt = dt
        rows = np.asarray(battery_rows, dtype=int)
        self.r_b = sensitivity.r3[:, rows]
        self.x_b = sensitivity.x3[:, rows]
        self.sensed = (self.r_b != 0.0) | (self.x_b != 0.0)
        self.n_voltages = sensitivity.n

    def initial_state(self) -> OfoState:
        n = self.fleet.n_phases
        return OfoState(
            p=np.zeros(n),
            q=np.zeros(n),
            duals=DualState.zeros(self.n_voltages, self.fleet.n_batteries),
        )

    def soc_jacobians(self, p, q):
        fl = self.fleet
        dp, dq = soc_sensitivities(
            p,
            q,
            fl.eta_discharge,
            fl.eta_charge,
            self.dt,
            convention=self.config.soc_sensitivity,
            mode=self.config.soc_mode,
            energy_scale=fl.kwh_per_pu_second,
        )
        return fl.aggregate * dp, fl.aggregate * dq

    def step(self, state: OfoState, v, e) -> OfoState:
        return ofo_step(state, v, e, self)


def ofo_step(state: OfoState, v, e, ctrl: OfoController) -> OfoState:
    """One OFO iteration from fresh measurements; returns the new state.

    The new setpoints to apply are ``new_state.p`` / ``new_state.q``.
    """
    cfg = ctrl.config
    v = np.asarray(v, dtype=float)
    v_prev = v if state.v_prev is None else state.v_prev
    duals = dual_update(state.duals, v, e, cfg)
    if cfg.anti_windup:
        duals = anti_windup(
            duals, state.p, state.q, ctrl.fleet.s_max, ctrl.sensed, cfg.saturation_tol
        )
    de_dp, de_dq = ctrl.soc_jacobians(state.p, state.q)
    g_p, g_q = primal_gradients(
        state.p, state.q, v, v_prev, duals, ctrl.r_b, ctrl.x_b, de_dp, de_dq, cfg
    )
    p, q = primal_step_and_project(state.p, state.q, g_p, g_q, cfg.rho, ctrl.fleet.s_max)
    return OfoState(p=p, q=q, duals=duals, v_prev=v.copy())
