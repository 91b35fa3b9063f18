"""Command-line entry point (``ofogrid``).

Subcommands: ``validate``, ``run``, ``compare`` and ``synth-trace``.

Exit statuses: 0 success, 2 usage error, 3 configuration error (scenario,
feeder or trace file), 4 plant failure (power flow did not converge),
5 I/O failure writing outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .feeder import FeederError, FeederModel, load_feeder
from .harness.compare import ControllerRunError, check_controllers, metrics_for, run_controllers
from .harness.loop import SimulationError, prepare
from .harness.output import format_table, plot_data, write_all
from .harness.scenario import CONTROLLERS, ConfigError, Scenario, load_scenario
from .harness.traces import SynthSpec, TraceError, synth_trace, write_trace

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PLANT = 4
EXIT_IO = 5

log = logging.getLogger("ofogrid")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return value


def _controller_list(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    overrides = {"seed": getattr(args, "seed", None)}
    if getattr(args, "warmup", None) is not None:
        overrides["warmup"] = args.warmup
    return sc.with_overrides(**overrides)


def validation_report(sc: Scenario) -> tuple[list[str], list[str]]:
    """``(report lines, problems)`` for a parsed scenario."""
    problems = []
    topo, configs = load_feeder(sc.feeder_source())
    model = FeederModel(topo, configs)
    labels = model.labels()
    if sc.focus not in labels:
        problems.append(f"focus: {sc.focus!r} is not a (bus.phase) entry of the feeder")
    setup = prepare(sc)
    r3 = setup.sensitivity.r3
    sym = np.linalg.eigvalsh(0.5 * (r3 + r3.T))
    eig = np.linalg.eigvals(r3)
    lines = [
        f"scenario        {sc.name}",
        f"feeder          {topo.name} ({len(topo.buses)} buses, slack {topo.slack_bus})",
        f"N_ph            {model.n}",
        f"batteries       {len(sc.batteries)} ({setup.fleet.n_phases} battery phases)",
        f"data centers    {len(sc.data_centers)}",
        f"steps           {sc.n_steps} (dt {sc.dt:g} s, warm-up {sc.warmup:g} s)",
        f"R3 eigenvalues  real part min {eig.real.min():.4g} max {eig.real.max():.4g}",
        f"R3 sym. part    min {sym.min():.4g} max {sym.max():.4g}",
        f"trace sha256    {setup.trace_sha256}",
    ]
    # zero-length switches give exact zero eigenvalues; allow round-off
    if sym.min() < -1e-9 * max(sym.max(), 1.0):
        problems.append("R3 symmetric part is not positive semidefinite")
    return lines, problems


def cmd_validate(args) -> int:
    sc = _load(args)
    lines, problems = validation_report(sc)
    print("\n".join(lines))
    for p in problems:
        print(f"invalid: {p}", file=sys.stderr)
    if problems:
        return EXIT_CONFIG
    print("valid")
    return EXIT_OK


def _emit(args, sc: Scenario, results: dict) -> int:
    metrics = metrics_for(results, sc.warmup)
    print(format_table(metrics))
    try:
        written = write_all(args.out, sc, results, metrics, sc.warmup)
        if args.render:
            from .plotting import render

            first = next(iter(results.values()))
            soc_lim = 100.0 * np.array([b.soc_min for b in sc.batteries] + [b.soc_max for b in sc.batteries])
            written += render(
                args.out,
                plot_data(results, sc.warmup),
                first.voltage_limits,
                soc_limits_pct=sorted(set(np.round(soc_lim, 6))),
                focus_label=first.focus,
            )
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args)
    name = args.controller or sc.controller
    check_controllers([name])
    results = run_controllers(sc, [name])
    return _emit(args, sc, results)


def cmd_compare(args) -> int:
    sc = _load(args)
    names = check_controllers(args.controllers, minimum=2)
    results = run_controllers(sc, names, jobs=args.jobs)
    return _emit(args, sc, results)


def cmd_synth_trace(args) -> int:
    spec = SynthSpec(
        seed=args.seed,
        range_mw=(args.range[0], args.range[1]),
        dwell_mean_s=args.dwell,
        duration_s=args.duration,
        dt=args.dt,
        jitter=args.jitter,
    )
    trace = synth_trace(spec)
    try:
        write_trace(trace, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(trace)} samples to {args.out} (sha256 {trace.digest()})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ofogrid",
        description="Battery voltage control on distribution feeders with data-center load.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p, warmup=True):
        p.add_argument("--scenario", required=True,
                       help="scenario file or bundled name (ieee13-mod, ieee13-mod-charge-biased)")
        p.add_argument("--seed", type=_u64, help="override the scenario seed")
        if warmup:
            p.add_argument("--warmup", type=float, help="warm-up seconds excluded from metrics")

    p = sub.add_parser("validate", help="check a scenario and report model dimensions")
    scenario_args(p, warmup=False)
    p.set_defaults(func=cmd_validate)

    def output_args(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--render", action="store_true", help="also write PNG figures")

    p = sub.add_parser("run", help="simulate one controller")
    scenario_args(p)
    output_args(p)
    p.add_argument("--controller", choices=CONTROLLERS, help="override the scenario controller")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="simulate several controllers on one trace")
    scenario_args(p)
    output_args(p)
    p.add_argument("--controllers", type=_controller_list, default=list(CONTROLLERS),
                   help="comma-separated list (default: all four)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth-trace", help="write a seeded synthetic data-center trace")
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--range", type=float, nargs=2, default=(1.0, 4.0), metavar=("MIN_MW", "MAX_MW"))
    p.add_argument("--dwell", type=float, default=5.0, help="mean dwell time (s)")
    p.add_argument("--duration", type=float, default=1800.0, help="seconds")
    p.add_argument("--dt", type=float, default=0.1, help="sample period (s)")
    p.add_argument("--jitter", type=float, default=0.0, help="noise std as a fraction of the range")
    p.set_defaults(func=cmd_synth_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, FeederError, TraceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ControllerRunError as exc:
        print(f"plant failure: {exc}", file=sys.stderr)
        return EXIT_PLANT
    except SimulationError as exc:
        print(f"plant failure: {exc}", file=sys.stderr)
        return EXIT_PLANT


if __name__ == "__main__":
    sys.exit(main())
