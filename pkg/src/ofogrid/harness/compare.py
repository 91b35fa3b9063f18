"""Run several controllers on one disturbance realization."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

from .loop import SimResult, SimulationError, prepare, simulate
from .metrics import Metrics, compute_metrics
from .scenario import CONTROLLERS, ConfigError, Scenario


class ControllerRunError(RuntimeError):
    """A run inside a comparison failed; names the controller."""

    def __init__(self, controller: str, cause: Exception):
        super().__init__(f"controller {controller!r}: {cause}")
        self.controller = controller
        self.cause = cause


def _run_one(scenario: Scenario, name: str) -> SimResult:
    return simulate(prepare(scenario), name)


def check_controllers(controllers: list[str], minimum: int = 1) -> list[str]:
    names = list(controllers)
    if len(names) < minimum:
        raise ConfigError("controllers", f"need at least {minimum} controllers, got {len(names)}")
    if len(set(names)) != len(names):
        raise ConfigError("controllers", "controller names must be unique")
    for n in names:
        if n not in CONTROLLERS:
            raise ConfigError("controllers", f"unknown controller {n!r}; choose from {CONTROLLERS}")
    return names


def run_controllers(
    scenario: Scenario, controllers: list[str], jobs: int = 1
) -> dict[str, SimResult]:
    """Results keyed by controller, in the requested order.

    With ``jobs > 1`` runs execute in worker processes; each rebuilds the
    same seeded traces, and the trace hashes are checked to be equal.
    """
    names = check_controllers(controllers)
    results: dict[str, SimResult] = {}
    if jobs <= 1 or len(names) == 1:
        setup = prepare(scenario)
        for n in names:
            try:
                results[n] = simulate(setup, n)
            except SimulationError as exc:
                raise ControllerRunError(n, exc) from exc
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(names))) as pool:
            futures = {n: pool.submit(_run_one, scenario, n) for n in names}
            for n in names:
                try:
                    results[n] = futures[n].result()
                except SimulationError as exc:
                    raise ControllerRunError(n, exc) from exc
    hashes = {r.trace_sha256 for r in results.values()}
    if len(hashes) != 1:
        raise RuntimeError("controllers saw different disturbance traces")
    return results


def metrics_for(results: dict[str, SimResult], warmup_s: float) -> dict[str, Metrics]:
    return {n: compute_metrics(r, warmup_s) for n, r in results.items()}
