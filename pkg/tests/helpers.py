"""Shared builders for small feeders and scenarios, plus cached long runs."""

from __future__ import annotations

import functools
import io
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import yaml

from ofogrid.cli import main as cli_main
from ofogrid.feeder import Bus, FeederTopology, Line, LineImpedanceConfig

Z_BASE = 4.16**2 / 5.0  # ohm, default feeder bases

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_REPORT: dict[int, str] = {}


def config_602() -> LineImpedanceConfig:
    r = [[0.7526, 0.1580, 0.1560], [0.1580, 0.7475, 0.1535], [0.1560, 0.1535, 0.7436]]
    x = [[1.1814, 0.4236, 0.5017], [0.4236, 1.1983, 0.3849], [0.5017, 0.3849, 1.2112]]
    return LineImpedanceConfig(np.array(r), np.array(x), "602")


def single_phase_toy(r_pu: float, x_pu: float, n_lines: int = 1, v_slack2: float = 1.0):
    """Chain ``s -> 1 -> ... -> n`` on phase a, each line ``r_pu + j x_pu`` (1 mile)."""
    r = np.diag([r_pu * Z_BASE, 1.0, 1.0])
    x = np.diag([x_pu * Z_BASE, 1.0, 1.0])
    cfg = LineImpedanceConfig(r, x, "toy")
    names = ["s"] + [str(k) for k in range(1, n_lines + 1)]
    topo = FeederTopology(
        buses=[Bus(b, (0,)) for b in names],
        lines=[Line(a, b, (0,), 1.0, "toy") for a, b in zip(names[:-1], names[1:])],
        slack_bus="s",
        slack_v2=v_slack2,
    )
    return topo, {"toy": cfg}


def three_phase_chain(lengths_mi, config: LineImpedanceConfig | None = None):
    cfg = config or config_602()
    names = ["s"] + [str(k) for k in range(1, len(lengths_mi) + 1)]
    topo = FeederTopology(
        buses=[Bus(b, (0, 1, 2)) for b in names],
        lines=[
            Line(a, b, (0, 1, 2), float(length), cfg.name)
            for a, b, length in zip(names[:-1], names[1:], lengths_mi)
        ],
        slack_bus="s",
    )
    return topo, {cfg.name: cfg}


TOY_FEEDER_YAML = {
    "name": "toy",
    "base": {"s_kva": 5000, "v_kv_ll": 4.16},
    "slack": {"bus": "s", "v_pu": 1.0},
    "configs": {"602": {"r": [[0.7526, 0.1580, 0.1560], [0.7475, 0.1535], [0.7436]],
                        "x": [[1.1814, 0.4236, 0.5017], [1.1983, 0.3849], [1.2112]]}},
    "buses": [{"id": "s", "phases": "abc"}, {"id": "1", "phases": "abc"},
              {"id": "2", "phases": "abc"}],
    "lines": [{"from": "s", "to": "1", "phases": "abc", "length_ft": 2000, "config": "602"},
              {"from": "1", "to": "2", "phases": "abc", "length_ft": 1000, "config": "602"}],
}


def small_scenario_dict(**overrides) -> dict:
    """Short run on the bundled feeder; keeps tests quick."""
    base = yaml.safe_load(
        Path(__file__).resolve().parents[1].joinpath(
            "src/ofogrid/data/scenario-ieee13-mod.yaml"
        ).read_text()
    )
    base.update({"duration": 30.0, "warmup": 5.0, "name": "small"})
    base.update(overrides)
    return base


def write_scenario(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def run_cli(*argv) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cli_main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


@functools.lru_cache(maxsize=None)
def cli_compare(scenario: str, controllers: tuple[str, ...], tag: str = "") -> tuple[int, Path]:
    """Run ``ofogrid compare`` once per (scenario, controllers, tag) and cache the output dir."""
    out = Path(tempfile.mkdtemp(prefix=f"ofogrid-compare{tag}-"))
    code, _, err = run_cli(
        "compare", "--scenario", scenario, "--out", out, "--controllers", ",".join(controllers)
    )
    if code != 0:
        raise RuntimeError(f"compare failed ({code}): {err}")
    return code, out


ALL_CONTROLLERS = ("none", "ofo", "ofo-no-smoothing", "benchmark")


def read_metrics(path: Path) -> dict[tuple[str, str], dict[str, float]]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    table = {}
    for ln in lines[1:]:
        cells = ln.split(",")
        table[(cells[0], cells[1])] = {c: float(v) for c, v in zip(header[2:], cells[2:])}
    return table


def read_columns(path: Path, prefix: str) -> tuple[list[str], np.ndarray]:
    """Columns of a time-series CSV whose header starts with ``prefix``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    idx = [i for i, h in enumerate(header) if h.startswith(prefix)]
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=[0] + idx, ndmin=2)
    return [header[i] for i in idx], data


def lagrangian_case(seed: int, margin: float = 1e-3):
    """Random interior point of the OFO problem on the bundled feeder.

    Returns ``(ctrl, point, lagrangian)``: the controller, a dict with
    ``p, q, v, v_prev, e, duals`` and the partial Lagrangian as a function
    of the stacked setpoints ``[p, q]``. The Lagrangian is rebuilt from the
    linear voltage model and :func:`soc_step`, independently of the
    controller's gradient code; duals are frozen.
    """
    from ofogrid.harness.loop import make_controller
    from ofogrid.ofo import DualState
    from ofogrid.storage import FleetState, soc_step

    rng = np.random.default_rng(seed)
    setup = _bundled_setup()
    ctrl = make_controller(setup, "ofo")
    cfg, fleet = ctrl.config, ctrl.fleet
    n, m, nb = ctrl.n_voltages, fleet.n_phases, fleet.n_batteries

    # setpoints inside 90% of the disk, every entry at least `margin` from 0
    radius = 0.9 * fleet.s_max * np.sqrt(rng.uniform(0, 1, m))
    angle = rng.uniform(0, 2 * np.pi, m)
    p, q = radius * np.cos(angle), radius * np.sin(angle)
    p = np.where(np.abs(p) < margin, np.copysign(margin, p), p)
    q = np.where(np.abs(q) < margin, np.copysign(margin, q), q)

    v0 = rng.uniform(0.9, 1.1, n)
    v_prev = v0 + rng.normal(0, 0.01, n)
    e_prev = rng.uniform(0.2, 0.8, nb) * fleet.capacity
    duals = DualState(
        mu_lo=rng.exponential(0.5, n), mu_hi=rng.exponential(0.5, n),
        lam_lo=rng.exponential(0.5, nb), lam_hi=rng.exponential(0.5, nb),
        mu_lo_prev=np.zeros(n), mu_hi_prev=np.zeros(n),
    )
    c_vf, c_p, c_q = (float(np.asarray(c)) for c in (cfg.c_vf, cfg.c_p, cfg.c_q))
    mode, dt = cfg.soc_mode, ctrl.dt

    def lagrangian(x):
        pp, qq = x[:m], x[m:]
        v = v0 + ctrl.r_b @ (pp - p) + ctrl.x_b @ (qq - q)
        e = soc_step(FleetState(e_prev, pp, qq), fleet, dt, mode)
        return (
            0.5 * c_vf * np.sum((v - v_prev) ** 2)
            + 0.5 * c_p * np.sum(pp**2)
            + 0.5 * c_q * np.sum(qq**2)
            + duals.mu_hi @ (v - cfg.v_max2)
            + duals.mu_lo @ (cfg.v_min2 - v)
            + duals.lam_hi @ (e - cfg.e_max)
            + duals.lam_lo @ (cfg.e_min - e)
        )

    point = dict(p=p, q=q, v=v0, v_prev=v_prev, e=e_prev, duals=duals)
    return ctrl, point, lagrangian


@functools.lru_cache(maxsize=None)
def _bundled_setup():
    from ofogrid.harness.loop import prepare
    from ofogrid.harness.scenario import load_scenario

    return prepare(load_scenario("ieee13-mod").with_overrides(duration=10.0, warmup=0.0))


def plant_sign_mismatches(h: float = 1e-4) -> tuple[int, list[str]]:
    """Compare plant finite-difference sensitivities with the R3/X3 diagonals.

    Central differences of the exact power flow at the bundled feeder's full
    static demand, one (bus, phase) entry and one of p/q at a time. Returns
    the number of entries checked and the ones whose sign disagrees.
    """
    from ofogrid.feeder import FeederModel, Plant, PowerInjection, load_feeder, sensitivity_from_model

    topo, cfgs = load_feeder("ieee13-mod")
    model = FeederModel(topo, cfgs)
    sens = sensitivity_from_model(model)
    plant = Plant(model)
    demand = model.static_demand()
    bad, checked = [], 0
    for k in range(model.n):
        e = np.zeros(model.n)
        e[k] = h
        for which, ref in (("p", sens.r3), ("q", sens.x3)):
            up = PowerInjection(e, 0 * e) if which == "p" else PowerInjection(0 * e, e)
            dn = PowerInjection(-e, 0 * e) if which == "p" else PowerInjection(0 * e, -e)
            fd = (plant.solve(up, demand, warm_start=False).v2[k]
                  - plant.solve(dn, demand, warm_start=False).v2[k]) / (2 * h)
            checked += 1
            if np.sign(fd) != np.sign(ref[k, k]):
                bad.append(f"{model.labels()[k]}/{which}: plant {fd:.3g}, model {ref[k, k]:.3g}")
    return checked, bad
