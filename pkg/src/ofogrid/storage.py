"""Battery fleet: SoC dynamics with converter losses and SoC sensitivities.

Each battery has one SoC (kWh) and one (p, q) setpoint per connected phase.
Setpoints are per-unit on the feeder's per-phase power base; positive ``p``
discharges the battery into the grid.

Two SoC transition conventions are available:

``"paper"``
    ``e' = e + p_minus*dt/eta_c - eta_d*p_plus*dt - loss(q)*dt``, the
    transition exactly as printed in the source model.
``"physical"``
    ``e' = e + eta_c*p_minus*dt - p_plus*dt/eta_d - loss(q)*dt``, the usual
    convention where both directions lose energy.

``loss(q) = (1 - eta_d*eta_c) / (pi*eta_d) * |q|`` is the cycle-averaged
converter loss caused by reactive power.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SOC_MODES = ("paper", "physical")
SECONDS_PER_HOUR = 3600.0


class StorageError(ValueError):
    pass


@dataclass(frozen=True)
class SignedSplit:
    plus: np.ndarray
    minus: np.ndarray


def split_signed(x) -> SignedSplit:
    """Positive and negative parts, ``x = plus - minus`` with both >= 0."""
    x = np.asarray(x, dtype=float)
    return SignedSplit(np.maximum(x, 0.0), np.maximum(-x, 0.0))


def reactive_loss_coefficient(eta_discharge, eta_charge):
    return (1.0 - eta_discharge * eta_charge) / (np.pi * eta_discharge)


def reactive_loss_power(q, eta_discharge, eta_charge):
    """Average active power lost in the converter while exchanging ``q``.

    Same unit as ``q`` (kvar in -> kW out, p.u. in -> p.u. out).
    """
    return reactive_loss_coefficient(eta_discharge, eta_charge) * np.abs(q)


@dataclass(frozen=True)
class BatterySpec:
    bus: str
    phases: tuple[int, ...]
    s_max_kva: float  # per phase
    capacity_kwh: float
    e_min_kwh: float
    e_max_kwh: float
    eta_discharge: float = 0.95
    eta_charge: float = 0.95
    e_init_kwh: float | None = None

    def validate(self) -> None:
        if self.s_max_kva <= 0:
            raise StorageError(f"battery {self.bus}: s_max must be positive")
        if not 0 < self.e_min_kwh < self.e_max_kwh <= self.capacity_kwh:
            raise StorageError(
                f"battery {self.bus}: need 0 < e_min < e_max <= capacity, got "
                f"{self.e_min_kwh}, {self.e_max_kwh}, {self.capacity_kwh}"
            )
        for name in ("eta_discharge", "eta_charge"):
            eta = getattr(self, name)
            if not 0 < eta <= 1:
                raise StorageError(f"battery {self.bus}: {name} must be in (0, 1], got {eta}")
        if self.e_init_kwh is not None and not 0 <= self.e_init_kwh <= self.capacity_kwh:
            raise StorageError(f"battery {self.bus}: initial SoC outside [0, capacity]")

    @property
    def initial_soc(self) -> float:
        return 0.5 * self.capacity_kwh if self.e_init_kwh is None else self.e_init_kwh


class BatteryFleet:
    """Batteries plus the per-phase layout of their setpoint vectors.

    ``owner[k]`` is the battery owning setpoint entry ``k``; entries are
    ordered battery by battery, phases a-b-c within a battery.
    """

    def __init__(self, specs: Sequence[BatterySpec], s_phase_kva: float):
        if not specs:
            raise StorageError("fleet needs at least one battery")
        for s in specs:
            s.validate()
        self.specs = list(specs)
        self.s_phase_kva = float(s_phase_kva)
        self.owner = np.array([i for i, s in enumerate(specs) for _ in s.phases])
        self.phase_keys = [(s.bus, ph) for s in specs for ph in s.phases]
        per = lambda attr: np.array([getattr(specs[i], attr) for i in self.owner], dtype=float)
        self.s_max = per("s_max_kva") / self.s_phase_kva
        self.eta_discharge = per("eta_discharge")
        self.eta_charge = per("eta_charge")
        self.e_min = np.array([s.e_min_kwh for s in specs])
        self.e_max = np.array([s.e_max_kwh for s in specs])
        self.capacity = np.array([s.capacity_kwh for s in specs])
        self.aggregate = np.zeros((len(specs), self.owner.size))
        self.aggregate[self.owner, np.arange(self.owner.size)] = 1.0

    @property
    def n_batteries(self) -> int:
        return len(self.specs)

    @property
    def n_phases(self) -> int:
        return self.owner.size

    @property
    def kwh_per_pu_second(self) -> float:
        """Energy of one p.u. of per-phase power held for one second."""
        return self.s_phase_kva / SECONDS_PER_HOUR

    def initial_state(self) -> "FleetState":
        return FleetState(
            soc=np.array([s.initial_soc for s in self.specs]),
            p=np.zeros(self.n_phases),
            q=np.zeros(self.n_phases),
        )


@dataclass
class FleetState:
    soc: np.ndarray  # kWh, one per battery
    p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _energy_rate(p, q, eta_d, eta_c, mode: str) -> np.ndarray:
    """Per-phase energy rate (power units) entering the battery."""
    ps = split_signed(p)
    qs = split_signed(q)
    loss = reactive_loss_coefficient(eta_d, eta_c) * (qs.plus + qs.minus)
    if mode == "paper":
        return ps.minus / eta_c - eta_d * ps.plus - loss
    if mode == "physical":
        return eta_c * ps.minus - ps.plus / eta_d - loss
    raise StorageError(f"unknown SoC mode {mode!r}; expected one of {SOC_MODES}")


def soc_step(state: FleetState, fleet: BatteryFleet, dt: float, mode: str = "paper") -> np.ndarray:
    """SoC after holding ``state.p``/``state.q`` for ``dt`` seconds.

    No clipping: the result may leave ``[e_min, e_max]``.
    """
    rate = _energy_rate(state.p, state.q, fleet.eta_discharge, fleet.eta_charge, mode)
    return state.soc + fleet.aggregate @ rate * dt * fleet.kwh_per_pu_second


def soc_sensitivities(
    p,
    q,
    eta_discharge,
    eta_charge,
    dt: float,
    convention: str = "paper",
    mode: str = "paper",
    energy_scale: float = 1.0,
):
    """Diagonal entries of dSoC/dp and dSoC/dq, one per battery phase.

    ``convention="paper"`` returns the sign-function form
    ``(sgn(p-)/eta_c - eta_d sgn(p+)) dt`` and
    ``k sgn(-q+ - q-) dt``, with ``sgn(0) = 0``.

    ``convention="exact"`` returns the one-sided derivative of
    :func:`soc_step` under ``mode`` (again 0 at ``p = 0`` / ``q = 0``).

    Multiply by ``energy_scale`` to convert ``power * dt`` into SoC units.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    eta_d = np.broadcast_to(eta_discharge, p.shape)
    eta_c = np.broadcast_to(eta_charge, p.shape)
    k = reactive_loss_coefficient(eta_d, eta_c)
    ps, qs = split_signed(p), split_signed(q)
    if convention == "paper":
        dp = np.sign(ps.minus) / eta_c - eta_d * np.sign(ps.plus)
        dq = k * np.sign(-qs.plus - qs.minus)
    elif convention == "exact":
        if mode == "paper":
            charge, discharge = 1.0 / eta_c, eta_d
        elif mode == "physical":
            charge, discharge = eta_c, 1.0 / eta_d
        else:
            raise StorageError(f"unknown SoC mode {mode!r}")
        # d(p-)/dp = -1 when charging, d(p+)/dp = 1 when discharging
        dp = -charge * np.sign(ps.minus) - discharge * np.sign(ps.plus)
        dq = -k * np.sign(q)
    else:
        raise StorageError(f"unknown sensitivity convention {convention!r}")
    scale = dt * energy_scale
    return dp * scale, dq * scale


def with_setpoints(state: FleetState, p, q) -> FleetState:
    return replace(state, p=np.asarray(p, dtype=float), q=np.asarray(q, dtype=float))
