"""Closed-loop simulation harness: scenarios, traces, the loop and metrics."""

from .compare import run_controllers
from .loop import SimResult, run_closed_loop
from .metrics import Metrics, compute_metrics
from .scenario import Scenario, load_scenario

__all__ = [
    "Metrics",
    "Scenario",
    "SimResult",
    "compute_metrics",
    "load_scenario",
    "run_closed_loop",
    "run_controllers",
]
