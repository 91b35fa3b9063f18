"""Render comparison figures from the plot-ready tables.

Two figures are produced: focus-entry voltage per controller (time series
with a sideways histogram of the post-warm-up samples) and battery SoC per
controller.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def voltage_figure(series, hist, voltage_limits, focus_label: str = ""):
    """Time series and histogram of the focus voltage, one row per controller.

    Parameters
    ----------
    series : (header, columns)
        ``time_s`` followed by one magnitude column per controller.
    hist : (header, columns)
        ``bin_lo``, ``bin_hi`` followed by one count column per controller.
    voltage_limits : (float, float)
        Lower and upper limit, drawn as dashed lines.

    Returns
    -------
    matplotlib.figure.Figure
    """
    names = series[0][1:]
    t = series[1][0] / 60.0
    lo_edges, hi_edges = hist[1][0], hist[1][1]
    fig, axes = plt.subplots(
        len(names), 2, figsize=(9, 2.2 * len(names)), sharey=True,
        gridspec_kw={"width_ratios": [4, 1]}, squeeze=False,
    )
    for i, name in enumerate(names):
        ax_t, ax_h = axes[i]
        ax_t.plot(t, series[1][i + 1], lw=0.6, color=f"C{i}")
        counts = hist[1][i + 2]
        ax_h.barh(lo_edges, counts / max(counts.sum(), 1.0), height=hi_edges - lo_edges,
                  align="edge", color=f"C{i}")
        for ax in (ax_t, ax_h):
            for lim in voltage_limits:
                ax.axhline(lim, ls="--", lw=0.8, color="black")
            ax.grid(True, color="lightgray", alpha=0.7)
        ax_t.set_ylabel(f"{name}\n|V| (p.u.)")
        ax_h.set_xlabel("fraction" if i == len(names) - 1 else "")
    axes[-1][0].set_xlabel("time (min)")
    if focus_label:
        axes[0][0].set_title(f"voltage at {focus_label}")
    fig.tight_layout()
    return fig


def soc_figure(soc, soc_limits_pct=None):
    """SoC trajectories in percent, one panel per controller.

    ``soc`` is ``(header, columns)`` with columns named ``<controller>:<bus>``.
    """
    header, cols = soc
    t = cols[0] / 60.0
    groups: dict[str, list[tuple[str, np.ndarray]]] = {}
    for name, col in zip(header[1:], cols[1:]):
        ctrl, bus = name.split(":", 1)
        groups.setdefault(ctrl, []).append((bus, col))
    fig, axes = plt.subplots(len(groups), 1, figsize=(7, 2.2 * len(groups)), sharex=True,
                             squeeze=False)
    for ax, (ctrl, lines) in zip(axes[:, 0], groups.items()):
        for bus, col in lines:
            ax.plot(t, col, lw=1.0, label=f"bus {bus}")
        if soc_limits_pct is not None:
            for lim in soc_limits_pct:
                ax.axhline(lim, ls="--", lw=0.8, color="black")
        ax.set_ylabel(f"{ctrl}\nSoC (%)")
        ax.set_ylim(0, 100)
        ax.grid(True, color="lightgray", alpha=0.7)
    axes[0, 0].legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("time (min)")
    fig.tight_layout()
    return fig


def render(out_dir, tables: dict, voltage_limits, soc_limits_pct=None, focus_label: str = ""):
    """Write ``fig_voltage.png`` and ``fig_soc.png``; returns their paths."""
    out = Path(out_dir)
    paths = []
    fig = voltage_figure(tables["plot_voltage_focus"], tables["plot_voltage_hist"],
                         voltage_limits, focus_label)
    paths.append(out / "fig_voltage.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    fig = soc_figure(tables["plot_soc"], soc_limits_pct)
    paths.append(out / "fig_soc.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    return paths
