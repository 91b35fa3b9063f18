"""Closed-loop simulation: plant, disturbance, controller and battery SoC."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..benchmark import BenchmarkController
from ..feeder import (
    FeederModel,
    Plant,
    PowerFlowError,
    PowerInjection,
    SensitivityModel,
    load_feeder,
    parse_phases,
    sensitivity_from_model,
)
from ..ofo import OfoConfig, OfoController
from ..storage import BatteryFleet, BatterySpec, FleetState, soc_step
from .scenario import ConfigError, Scenario
from .traces import DisturbanceTrace, SynthSpec, load_trace, reactive_from_power_factor, synth_trace


class SimulationError(RuntimeError):
    """Plant failure during a run; carries the failing step."""

    def __init__(self, step: int, cause: PowerFlowError):
        super().__init__(f"plant failed at step {step}: {cause} (residual {cause.residual:.3e})")
        self.step = step
        self.residual = cause.residual


@dataclass
class SimResult:
    controller: str
    dt: float
    labels: list[str]  # (bus.phase) voltage entries
    battery_buses: list[str]
    battery_phase_labels: list[str]
    dc_buses: list[str]
    v2: np.ndarray  # (steps, n) squared voltage magnitudes
    soc: np.ndarray  # (steps, batteries) kWh at measurement time
    p: np.ndarray  # (steps, battery phases) applied, p.u.
    q: np.ndarray
    mu_lo: np.ndarray  # (steps, n); zeros for non-OFO controllers
    mu_hi: np.ndarray
    lam_lo: np.ndarray  # (steps, batteries)
    lam_hi: np.ndarray
    iterations: np.ndarray  # plant sweeps per step
    dc_mw: np.ndarray  # (steps, data centers)
    capacity_kwh: np.ndarray
    soc_limits_kwh: tuple[np.ndarray, np.ndarray]
    voltage_limits: tuple[float, float]
    focus: str
    trace_sha256: str
    s_phase_kva: float

    @property
    def n_steps(self) -> int:
        return self.v2.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(self.v2)

    @property
    def soc_fraction(self) -> np.ndarray:
        return self.soc / self.capacity_kwh


@dataclass
class Setup:
    """Everything derived from a scenario before the loop starts."""

    scenario: Scenario
    model: FeederModel
    sensitivity: SensitivityModel
    fleet: BatteryFleet
    battery_rows: np.ndarray  # voltage row of each battery phase
    static_demand: PowerInjection
    traces: list[DisturbanceTrace]
    dc_rows: list[list[int]]
    trace_sha256: str = ""
    extra: dict = field(default_factory=dict)


def build_traces(scenario: Scenario) -> list[DisturbanceTrace]:
    n = scenario.n_steps
    seeds = np.random.SeedSequence(scenario.seed).spawn(len(scenario.data_centers))
    traces = []
    for dc, ss in zip(scenario.data_centers, seeds):
        lo, hi = dc.range_mw
        if dc.trace.kind == "file":
            path = Path(scenario.base_dir, dc.trace.path)
            tr = load_trace(path, lo, hi, scenario.dt)
        else:
            spec = SynthSpec(
                seed=int(ss.generate_state(1)[0]),
                range_mw=(lo, hi),
                dwell_mean_s=dc.trace.dwell_mean_s,
                duration_s=scenario.duration,
                dt=scenario.dt,
                jitter=dc.trace.jitter,
            )
            tr = synth_trace(spec)
        traces.append(tr.fitted(n))
    return traces


def traces_digest(traces: list[DisturbanceTrace]) -> str:
    h = hashlib.sha256()
    for tr in traces:
        h.update(bytes.fromhex(tr.digest()))
    return h.hexdigest()


def prepare(scenario: Scenario) -> Setup:
    topo, configs = load_feeder(scenario.feeder_source())
    if scenario.slack_v_pu is not None:
        topo.slack_v2 = np.full(3, scenario.slack_v_pu**2)
    model = FeederModel(topo, configs)
    sens = sensitivity_from_model(model)

    specs, rows = [], []
    for i, b in enumerate(scenario.batteries):
        phases = parse_phases(b.phases)
        try:
            rows.extend(model.row(b.bus, ph) for ph in phases)
        except ValueError as exc:
            raise ConfigError(f"batteries[{i}]", str(exc)) from None
        specs.append(
            BatterySpec(
                bus=b.bus,
                phases=phases,
                s_max_kva=b.kw_per_phase,
                capacity_kwh=b.capacity_kwh,
                e_min_kwh=b.soc_min * b.capacity_kwh,
                e_max_kwh=b.soc_max * b.capacity_kwh,
                eta_discharge=b.eta_discharge,
                eta_charge=b.eta_charge,
                e_init_kwh=b.soc_init * b.capacity_kwh,
            )
        )
    fleet = BatteryFleet(specs, topo.s_phase_kva)

    static = model.static_demand()
    scale = scenario.static_load_scale
    # loads scale, capacitor banks do not
    shunt_q = np.zeros(model.n)
    for sh in topo.shunts:
        shunt_q[model.row(sh.bus, sh.phase)] += sh.kvar / topo.s_phase_kva
    static = PowerInjection(static.p * scale, (static.q + shunt_q) * scale - shunt_q)

    dc_rows = []
    for i, dc in enumerate(scenario.data_centers):
        r = model.rows(dc.bus)
        if not r:
            raise ConfigError(f"data_centers[{i}].bus", f"unknown bus {dc.bus!r}")
        dc_rows.append(r)
    traces = build_traces(scenario)
    return Setup(
        scenario=scenario,
        model=model,
        sensitivity=sens,
        fleet=fleet,
        battery_rows=np.array(rows),
        static_demand=static,
        traces=traces,
        dc_rows=dc_rows,
        trace_sha256=traces_digest(traces),
    )


def demand_series(setup: Setup) -> tuple[np.ndarray, np.ndarray]:
    """Per-step total demand ``(dP, dQ)``, shape (steps, n), p.u."""
    sc = setup.scenario
    n_steps = sc.n_steps
    dp = np.tile(setup.static_demand.p, (n_steps, 1))
    dq = np.tile(setup.static_demand.q, (n_steps, 1))
    s_phase_mw = setup.model.topology.s_phase_kva / 1000.0
    for dc, tr, rows in zip(sc.data_centers, setup.traces, setup.dc_rows):
        per_phase = tr.power_mw / len(rows) / s_phase_mw  # balanced
        q_phase = reactive_from_power_factor(per_phase, dc.power_factor)
        dp[:, rows] += per_phase[:, None]
        dq[:, rows] += q_phase[:, None]
    return dp, dq


def ofo_config(scenario: Scenario, fleet: BatteryFleet, smoothing: bool = True) -> OfoConfig:
    o = scenario.ofo
    lo, hi = scenario.voltage_limits
    return OfoConfig(
        rho=o.rho,
        c_vf=o.c_vf if smoothing else 0.0,
        c_p=o.c_p,
        c_q=o.c_q,
        v_min2=lo**2,
        v_max2=hi**2,
        e_min=fleet.e_min,
        e_max=fleet.e_max,
        anti_windup=o.anti_windup,
        soc_mode=scenario.soc_mode,
        soc_sensitivity=o.soc_sensitivity,
    )


def make_controller(setup: Setup, name: str):
    sc = setup.scenario
    if name == "none":
        return None
    if name in ("ofo", "ofo-no-smoothing"):
        cfg = ofo_config(sc, setup.fleet, smoothing=(name == "ofo"))
        return OfoController(setup.sensitivity, setup.fleet, setup.battery_rows, cfg, sc.dt)
    if name == "benchmark":
        local = [
            [setup.model.row(s.bus, ph) for ph in s.phases] for s in setup.fleet.specs
        ]
        return BenchmarkController(sc.benchmark, setup.fleet.owner, setup.fleet.s_max, local)
    raise ConfigError("controller", f"unknown controller {name!r}")


def _curtail(fleet: BatteryFleet, soc, p, q):
    """Physical battery bounds: a full battery cannot charge, an empty one cannot deliver."""
    full = (soc >= fleet.capacity)[fleet.owner]
    empty = (soc <= 0.0)[fleet.owner]
    p = np.where(full & (p < 0), 0.0, p)
    p = np.where(empty & (p > 0), 0.0, p)
    q = np.where(empty, 0.0, q)
    return p, q


def run_closed_loop(scenario: Scenario, controller: str | None = None) -> SimResult:
    """Simulate ``scenario`` with its controller (or ``controller`` override).

    Per step: net demand from traces and static loads, plant power flow with
    the current battery setpoints, controller update from the squared
    voltages and SoC, then SoC advance under the new setpoints.
    """
    name = controller or scenario.controller
    setup = prepare(scenario)
    return simulate(setup, name)


def simulate(setup: Setup, name: str) -> SimResult:
    sc = setup.scenario
    model, fleet = setup.model, setup.fleet
    ctrl = make_controller(setup, name)
    plant = Plant(model)
    dp, dq = demand_series(setup)
    n_steps, n = dp.shape
    nb, nph = fleet.n_batteries, fleet.n_phases
    rows = setup.battery_rows
    noise_rng = np.random.default_rng(np.random.SeedSequence([sc.seed, 0x6E6F6973]))

    rec = {
        "v2": np.empty((n_steps, n)),
        "soc": np.empty((n_steps, nb)),
        "p": np.empty((n_steps, nph)),
        "q": np.empty((n_steps, nph)),
        "mu_lo": np.zeros((n_steps, n)),
        "mu_hi": np.zeros((n_steps, n)),
        "lam_lo": np.zeros((n_steps, nb)),
        "lam_hi": np.zeros((n_steps, nb)),
        "iterations": np.empty(n_steps, dtype=int),
    }

    state = fleet.initial_state()
    cstate = ctrl.initial_state() if ctrl is not None else None
    inj = PowerInjection.zeros(n)
    for k in range(n_steps):
        inj.p[:] = 0.0
        inj.q[:] = 0.0
        np.add.at(inj.p, rows, state.p)
        np.add.at(inj.q, rows, state.q)
        try:
            res = plant.solve(inj, PowerInjection(dp[k], dq[k]))
        except PowerFlowError as exc:
            raise SimulationError(k, exc) from exc
        v2 = res.v2
        rec["v2"][k] = v2
        rec["soc"][k] = state.soc
        rec["iterations"][k] = res.iterations
        meas = v2
        if sc.measurement_noise > 0:
            meas = v2 + noise_rng.normal(0.0, sc.measurement_noise, n)

        if ctrl is None:
            p_cmd, q_cmd = state.p, state.q
        elif isinstance(ctrl, OfoController):
            cstate = ctrl.step(cstate, meas, state.soc)
            p_cmd, q_cmd = cstate.p, cstate.q
            d = cstate.duals
            rec["mu_lo"][k], rec["mu_hi"][k] = d.mu_lo, d.mu_hi
            rec["lam_lo"][k], rec["lam_hi"][k] = d.lam_lo, d.lam_hi
        else:
            cstate, p_cmd, q_cmd = ctrl.step(cstate, meas, state.soc)

        p_app, q_app = _curtail(fleet, state.soc, p_cmd, q_cmd)
        state = FleetState(state.soc, p_app, q_app)
        rec["p"][k], rec["q"][k] = p_app, q_app
        soc = soc_step(state, fleet, sc.dt, sc.soc_mode)
        state = FleetState(np.clip(soc, 0.0, fleet.capacity), p_app, q_app)

    labels = model.labels()
    return SimResult(
        controller=name,
        dt=sc.dt,
        labels=labels,
        battery_buses=[s.bus for s in fleet.specs],
        battery_phase_labels=[f"{b}.{'abc'[ph]}" for b, ph in fleet.phase_keys],
        dc_buses=[dc.bus for dc in sc.data_centers],
        dc_mw=np.column_stack([tr.power_mw for tr in setup.traces]) if setup.traces
        else np.zeros((n_steps, 0)),
        capacity_kwh=fleet.capacity.copy(),
        soc_limits_kwh=(fleet.e_min.copy(), fleet.e_max.copy()),
        voltage_limits=tuple(sc.voltage_limits),
        focus=sc.focus,
        trace_sha256=setup.trace_sha256,
        s_phase_kva=fleet.s_phase_kva,
        **rec,
    )
