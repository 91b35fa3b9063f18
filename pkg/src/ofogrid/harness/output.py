"""Delimited output files for runs and controller comparisons.

Every file is plain comma-separated text with a single header row, fixed
column order and ``%.10g`` number formatting, so identical runs produce
identical bytes. Files written into the output directory:

``timeseries-<controller>.csv``
    one row per control step: ``time_s``, ``v_<bus>.<ph>`` (p.u. magnitude),
    ``soc_<bus>`` (kWh), ``p_<bus>.<ph>`` / ``q_<bus>.<ph>`` (applied setpoints,
    kW / kvar), ``mu_lo_*`` / ``mu_hi_*`` / ``lam_lo_*`` / ``lam_hi_*`` (duals,
    zero for controllers without them), ``dc_<bus>_mw`` and ``plant_iterations``.
``metrics.csv``
    rows ``(scope, metric)`` with ``scope`` the focus entry or ``aggregate`` and
    ``metric`` in variance / range / violation; one column per controller.
``metrics_by_entry.csv``
    the same three metrics for every (bus, phase) entry.
``plot_voltage_focus.csv``
    focus-entry magnitude over time, one column per controller.
``plot_voltage_hist.csv``
    post-warm-up histogram of the focus magnitude on shared bins.
``plot_soc.csv``
    SoC in percent of capacity over time, one column per (controller, battery).
``manifest.json``
    scenario name, seed, controllers, warm-up, step count and trace hash.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .metrics import METRIC_NAMES, Metrics

FMT = "%.10g"
HIST_BIN_WIDTH = 0.0025  # p.u.


def _fmt(x: float) -> str:
    return FMT % x


def _write_table(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack(columns) if columns else np.zeros((0, 0))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt=FMT, delimiter=",")


def write_timeseries(path: str | Path, result) -> None:
    kva = result.s_phase_kva
    header = ["time_s"]
    cols = [result.times]
    header += [f"v_{lb}" for lb in result.labels]
    cols += list(result.v.T)
    header += [f"soc_{b}" for b in result.battery_buses]
    cols += list(result.soc.T)
    header += [f"p_{lb}" for lb in result.battery_phase_labels]
    cols += list((result.p * kva).T)
    header += [f"q_{lb}" for lb in result.battery_phase_labels]
    cols += list((result.q * kva).T)
    for name in ("mu_lo", "mu_hi"):
        header += [f"{name}_{lb}" for lb in result.labels]
        cols += list(getattr(result, name).T)
    for name in ("lam_lo", "lam_hi"):
        header += [f"{name}_{b}" for b in result.battery_buses]
        cols += list(getattr(result, name).T)
    header += [f"dc_{b}_mw" for b in result.dc_buses]
    cols += list(result.dc_mw.T)
    header.append("plant_iterations")
    cols.append(result.iterations.astype(float))
    _write_table(Path(path), header, cols)


def summary_rows(metrics: dict[str, Metrics]) -> list[tuple[str, str, list[float]]]:
    """``(scope, metric, values per controller)`` in fixed order."""
    names = list(metrics)
    first = metrics[names[0]]
    scopes = ([first.focus] if first.focus else []) + ["aggregate"]
    rows = []
    for scope in scopes:
        per = [metrics[c].aggregate if scope == "aggregate" else metrics[c].entry(scope) for c in names]
        rows += [(scope, m, [d[m] for d in per]) for m in METRIC_NAMES]
    return rows


def write_metrics(path: str | Path, metrics: dict[str, Metrics]) -> None:
    """Table-style summary: one row per (scope, metric), one column per controller."""
    lines = [",".join(["scope", "metric"] + list(metrics))]
    lines += [",".join([s, m] + [_fmt(v) for v in vals]) for s, m, vals in summary_rows(metrics)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_entry_metrics(path: str | Path, metrics: dict[str, Metrics]) -> None:
    names = list(metrics)
    labels = metrics[names[0]].labels
    lines = [",".join(["entry", "metric"] + names)]
    for i, lb in enumerate(labels):
        for m in METRIC_NAMES:
            lines.append(",".join([lb, m] + [_fmt(getattr(metrics[c], m)[i]) for c in names]))
    Path(path).write_text("\n".join(lines) + "\n")


def histogram_bins(samples: list[np.ndarray], width: float = HIST_BIN_WIDTH) -> np.ndarray:
    """Shared bin edges on a fixed grid covering every sample."""
    lo = min(float(s.min()) for s in samples)
    hi = max(float(s.max()) for s in samples)
    start = np.floor(lo / width) * width
    stop = np.ceil(hi / width) * width
    n = max(int(round((stop - start) / width)), 1)
    return start + width * np.arange(n + 1)


def plot_data(results: dict, warmup_s: float) -> dict[str, tuple[list[str], list[np.ndarray]]]:
    """Plot-ready tables keyed by file stem: ``(header, columns)``."""
    names = list(results)
    first = results[names[0]]
    fi = first.labels.index(first.focus) if first.focus in first.labels else 0
    start = int(round(warmup_s / first.dt))
    focus = {c: results[c].v[:, fi] for c in names}

    series = (["time_s"] + names, [first.times] + [focus[c] for c in names])
    post = [focus[c][start:] for c in names]
    edges = histogram_bins(post)
    counts = [np.histogram(s, bins=edges)[0].astype(float) for s in post]
    hist = (["bin_lo", "bin_hi"] + names, [edges[:-1], edges[1:]] + counts)

    soc_header, soc_cols = ["time_s"], [first.times]
    for c in names:
        r = results[c]
        for j, b in enumerate(r.battery_buses):
            soc_header.append(f"{c}:{b}")
            soc_cols.append(100.0 * r.soc_fraction[:, j])
    return {
        "plot_voltage_focus": series,
        "plot_voltage_hist": hist,
        "plot_soc": (soc_header, soc_cols),
    }


def write_manifest(path: str | Path, scenario, results: dict, warmup_s: float) -> None:
    hashes = {c: r.trace_sha256 for c, r in results.items()}
    first = next(iter(results.values()))
    doc = {
        "scenario": scenario.name,
        "seed": int(scenario.seed),
        "dt_s": float(scenario.dt),
        "duration_s": float(scenario.duration),
        "warmup_s": float(warmup_s),
        "n_steps": int(first.n_steps),
        "focus": first.focus,
        "controllers": list(results),
        "trace_sha256": first.trace_sha256,
        "trace_sha256_by_controller": hashes,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_all(
    out_dir: str | Path,
    scenario,
    results: dict,
    metrics: dict[str, Metrics],
    warmup_s: float,
) -> list[Path]:
    """Write every output file for ``results`` (controller -> SimResult)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c, r in results.items():
        p = out / f"timeseries-{c}.csv"
        write_timeseries(p, r)
        written.append(p)
    write_metrics(out / "metrics.csv", metrics)
    write_entry_metrics(out / "metrics_by_entry.csv", metrics)
    written += [out / "metrics.csv", out / "metrics_by_entry.csv"]
    for stem, (header, cols) in plot_data(results, warmup_s).items():
        p = out / f"{stem}.csv"
        _write_table(p, header, cols)
        written.append(p)
    write_manifest(out / "manifest.json", scenario, results, warmup_s)
    written.append(out / "manifest.json")
    return written


def format_table(metrics: dict[str, Metrics]) -> str:
    """Fixed-width text rendering of the summary table for the terminal."""
    rows = [["scope", "metric"] + list(metrics)]
    rows += [[s, m] + [f"{v:.4g}" for v in vals] for s, m, vals in summary_rows(metrics)]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows)
