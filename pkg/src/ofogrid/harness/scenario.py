"""Scenario configuration files.

A scenario is a YAML mapping::

    name: ieee13-mod
    feeder: ieee13-mod            # bundled fixture name or path (relative to this file)
    slack_v_pu: 1.03              # optional override of the feeder's source voltage
    static_load_scale: 0.5        # multiplies every constant load of the feeder
    dt: 0.1                       # s
    duration: 1800                # s, multiple of dt
    warmup: 120                   # s, excluded from metrics
    seed: 7
    soc_mode: paper               # paper | physical
    voltage_limits: [0.95, 1.05]  # p.u. magnitude
    focus: 675.c                  # bus.phase reported on its own in the metrics
    measurement_noise: 0.0        # std of additive noise on squared voltages
    batteries:
      - {bus: "611", phases: abc, kw_per_phase: 500, capacity_kwh: 200,
         soc_min: 0.1, soc_max: 0.9, soc_init: 0.5, eta_discharge: 0.95, eta_charge: 0.95}
    data_centers:
      - bus: "611"
        range_mw: [1.0, 4.0]
        power_factor: 0.95
        trace: {kind: synthetic, dwell_mean_s: 5, jitter: 0.02}   # or {kind: file, path: x.csv}
    controller: ofo               # none | ofo | ofo-no-smoothing | benchmark
    ofo: {rho: .., c_vf: .., c_p: .., c_q: .., anti_windup: true}
    benchmark: {deadband: .., dv_max: .., ev_max: .., v_set: .., alpha: .., theta: .., rho: ..}

Every synthetic data-center trace draws from its own child of ``seed``.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..benchmark import BenchmarkConfig
from ..feeder import FeederError, parse_phases

CONTROLLERS = ("none", "ofo", "ofo-no-smoothing", "benchmark")
BUNDLED_SCENARIOS = {
    "ieee13-mod": "scenario-ieee13-mod.yaml",
    "ieee13-mod-charge-biased": "scenario-ieee13-mod-charge-biased.yaml",
}


class ConfigError(ValueError):
    """Scenario file problem; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class BatteryEntry:
    bus: str
    phases: str = "abc"
    kw_per_phase: float = 500.0
    capacity_kwh: float = 200.0
    soc_min: float = 0.1
    soc_max: float = 0.9
    soc_init: float = 0.5
    eta_discharge: float = 0.95
    eta_charge: float = 0.95


@dataclass
class TraceSource:
    kind: str = "synthetic"
    path: str | None = None
    dwell_mean_s: float = 5.0
    jitter: float = 0.0


@dataclass
class DataCenter:
    bus: str
    range_mw: tuple[float, float] = (1.0, 4.0)
    power_factor: float = 0.95
    trace: TraceSource = field(default_factory=TraceSource)


@dataclass
class OfoParams:
    rho: float = 0.05
    c_vf: float = 1.0
    c_p: float = 0.01
    c_q: float = 0.01
    anti_windup: bool = True
    soc_sensitivity: str = "exact"


@dataclass
class Scenario:
    name: str
    feeder: str
    batteries: list[BatteryEntry]
    data_centers: list[DataCenter]
    controller: str = "ofo"
    dt: float = 0.1
    duration: float = 1800.0
    warmup: float = 120.0
    seed: int = 0
    slack_v_pu: float | None = None
    static_load_scale: float = 1.0
    soc_mode: str = "paper"
    voltage_limits: tuple[float, float] = (0.95, 1.05)
    focus: str = "675.c"
    measurement_noise: float = 0.0
    ofo: OfoParams = field(default_factory=OfoParams)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    base_dir: str = "."

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def with_overrides(self, **changes) -> "Scenario":
        out = copy.deepcopy(self)
        for key, value in changes.items():
            if value is not None:
                setattr(out, key, value)
        validate_scenario(out)
        return out

    def feeder_source(self) -> str:
        from ..feeder import BUNDLED_FEEDERS

        if self.feeder in BUNDLED_FEEDERS:
            return self.feeder
        return str(Path(self.base_dir, self.feeder))


def _build(cls, data: Any, path: str):
    if not isinstance(data, Mapping):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0], "unknown field")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def _num(obj, attr: str, path: str, cast=float):
    value = getattr(obj, attr)
    try:
        value = cast(value)
    except (TypeError, ValueError):
        where = f"{path}.{attr}" if path else attr
        raise ConfigError(where, f"expected a number, got {value!r}") from None
    setattr(obj, attr, value)
    return value


def scenario_from_dict(data: Mapping, base_dir: str | Path = ".") -> Scenario:
    if not isinstance(data, Mapping):
        raise ConfigError("", "scenario must be a mapping")
    data = dict(data)
    for required in ("name", "feeder", "batteries", "data_centers"):
        if required not in data:
            raise ConfigError(required, "missing required field")
    if not isinstance(data["batteries"], list):
        raise ConfigError("batteries", "expected a list")
    if not isinstance(data["data_centers"], list):
        raise ConfigError("data_centers", "expected a list")
    data["batteries"] = [
        _build(BatteryEntry, b, f"batteries[{i}]") for i, b in enumerate(data["batteries"])
    ]
    dcs = []
    for i, d in enumerate(data["data_centers"]):
        d = dict(d) if isinstance(d, Mapping) else d
        if isinstance(d, dict) and "trace" in d:
            d["trace"] = _build(TraceSource, d["trace"], f"data_centers[{i}].trace")
        dc = _build(DataCenter, d, f"data_centers[{i}]")
        dc.range_mw = tuple(float(x) for x in dc.range_mw)
        dcs.append(dc)
    data["data_centers"] = dcs
    if "ofo" in data:
        data["ofo"] = _build(OfoParams, data["ofo"], "ofo")
    if "benchmark" in data:
        data["benchmark"] = _build(BenchmarkConfig, data["benchmark"], "benchmark")
    if "voltage_limits" in data:
        data["voltage_limits"] = tuple(float(x) for x in data["voltage_limits"])
    data["feeder"] = str(data["feeder"])
    scenario = _build(Scenario, data, "")
    scenario.base_dir = str(base_dir)
    validate_scenario(scenario)
    return scenario


def validate_scenario(sc: Scenario) -> None:
    """Check every scalar invariant; raises :class:`ConfigError` with a field path."""
    dt = _num(sc, "dt", "")
    duration = _num(sc, "duration", "")
    warmup = _num(sc, "warmup", "")
    _num(sc, "seed", "", int)
    _num(sc, "static_load_scale", "")
    _num(sc, "measurement_noise", "")
    if dt <= 0:
        raise ConfigError("dt", "must be positive")
    if duration <= 0:
        raise ConfigError("duration", "must be positive")
    steps = duration / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ConfigError("duration", f"must be a multiple of dt ({dt})")
    if not 0 <= warmup < duration:
        raise ConfigError("warmup", "must satisfy 0 <= warmup < duration")
    if sc.slack_v_pu is not None:
        _num(sc, "slack_v_pu", "")
        if sc.slack_v_pu <= 0:
            raise ConfigError("slack_v_pu", "must be positive")
    if sc.static_load_scale < 0:
        raise ConfigError("static_load_scale", "must be non-negative")
    if sc.measurement_noise < 0:
        raise ConfigError("measurement_noise", "must be non-negative")
    if sc.controller not in CONTROLLERS:
        raise ConfigError("controller", f"must be one of {CONTROLLERS}, got {sc.controller!r}")
    if sc.soc_mode not in ("paper", "physical"):
        raise ConfigError("soc_mode", "must be 'paper' or 'physical'")
    lo, hi = sc.voltage_limits
    if not 0 < lo < hi:
        raise ConfigError("voltage_limits", "need 0 < min < max")
    if not sc.batteries:
        raise ConfigError("batteries", "at least one battery is required")
    for i, b in enumerate(sc.batteries):
        p = f"batteries[{i}]"
        b.bus = str(b.bus)
        try:
            parse_phases(b.phases)
        except FeederError as exc:
            raise ConfigError(f"{p}.phases", str(exc)) from None
        for attr in ("kw_per_phase", "capacity_kwh", "soc_min", "soc_max", "soc_init",
                     "eta_discharge", "eta_charge"):
            _num(b, attr, p)
        if b.kw_per_phase <= 0:
            raise ConfigError(f"{p}.kw_per_phase", "must be positive")
        if b.capacity_kwh <= 0:
            raise ConfigError(f"{p}.capacity_kwh", "must be positive")
        if not 0 < b.soc_min < b.soc_max <= 1:
            raise ConfigError(f"{p}.soc_min", "need 0 < soc_min < soc_max <= 1")
        if not 0 <= b.soc_init <= 1:
            raise ConfigError(f"{p}.soc_init", "must lie in [0, 1]")
        for attr in ("eta_discharge", "eta_charge"):
            if not 0 < getattr(b, attr) <= 1:
                raise ConfigError(f"{p}.{attr}", "must lie in (0, 1]")
    if len({b.bus for b in sc.batteries}) != len(sc.batteries):
        raise ConfigError("batteries", "at most one battery per bus")
    for i, d in enumerate(sc.data_centers):
        p = f"data_centers[{i}]"
        d.bus = str(d.bus)
        lo_mw, hi_mw = d.range_mw
        if not lo_mw < hi_mw:
            raise ConfigError(f"{p}.range_mw", "need min < max")
        _num(d, "power_factor", p)
        if not 0 < d.power_factor <= 1:
            raise ConfigError(f"{p}.power_factor", "must lie in (0, 1]")
        if d.trace.kind not in ("synthetic", "file"):
            raise ConfigError(f"{p}.trace.kind", "must be 'synthetic' or 'file'")
        if d.trace.kind == "file" and not d.trace.path:
            raise ConfigError(f"{p}.trace.path", "required for file traces")
        _num(d.trace, "dwell_mean_s", f"{p}.trace")
        _num(d.trace, "jitter", f"{p}.trace")
        if d.trace.dwell_mean_s <= 0:
            raise ConfigError(f"{p}.trace.dwell_mean_s", "must be positive")
    for attr in ("rho", "c_vf", "c_p", "c_q"):
        _num(sc.ofo, attr, "ofo")
    if sc.ofo.rho <= 0:
        raise ConfigError("ofo.rho", "must be positive")
    if sc.ofo.c_vf < 0:
        raise ConfigError("ofo.c_vf", "must be non-negative")
    for attr in ("c_p", "c_q"):
        if getattr(sc.ofo, attr) <= 0:
            raise ConfigError(f"ofo.{attr}", "must be positive")
    if sc.ofo.soc_sensitivity not in ("paper", "exact"):
        raise ConfigError("ofo.soc_sensitivity", "must be 'paper' or 'exact'")
    for attr in ("deadband", "dv_max", "ev_max", "v_set", "alpha", "theta", "rho"):
        _num(sc.benchmark, attr, "benchmark")
    try:
        sc.benchmark.validate()
    except ValueError as exc:
        raise ConfigError("benchmark", str(exc)) from None


def load_scenario(source: str | Path) -> Scenario:
    """Read a scenario from a path or a bundled name (``ieee13-mod``...)."""
    if str(source) in BUNDLED_SCENARIOS:
        res = resources.files("ofogrid.data").joinpath(BUNDLED_SCENARIOS[str(source)])
        text, base = res.read_text(), "."
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read scenario {source}: {exc}") from None
        base = str(path.parent)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError("", f"YAML parse error at {where}: {getattr(exc, 'problem', exc)}") from None
    return scenario_from_dict(data, base)
