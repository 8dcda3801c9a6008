"""Figures for run and certificate reports, plus gnuplot script emission."""

from __future__ import annotations

from pathlib import Path

import numpy as np

PLOT_SERIES = ("nu", "F", "f_gap", "b", "ubar")

_LABELS = {
    "nu": r"$\nu$",
    "F": r"$F$",
    "f_gap": r"$f$-gap",
    "b": r"$b$",
    "ubar": r"$\bar u$",
}


def gnuplot_script(csv_path, columns) -> str:
    """Gnuplot commands drawing the five monitored series against ``t``.

    ``columns`` is the CSV header; indices are 1-based as gnuplot expects.
    """
    idx = {name: i + 1 for i, name in enumerate(columns)}
    missing = [c for c in ("t",) + PLOT_SERIES if c not in idx]
    if missing:
        raise KeyError(f"trace lacks columns: {', '.join(missing)}")
    src = str(csv_path).replace('"', '\\"')
    lines = [
        "set datafile separator ','",
        "set key outside right",
        "set xlabel 't'",
        "set multiplot layout 2,1",
        "set title 'energies'",
        f'plot "{src}" using {idx["t"]}:{idx["nu"]} skip 1 with lines title "nu", \\',
        f'     "{src}" using {idx["t"]}:{idx["F"]} skip 1 with lines title "F"',
        "set title 'velocity statistics'",
        "set logscale y",
        f'plot "{src}" using {idx["t"]}:(abs(${idx["f_gap"]})) skip 1 with lines title "f_gap", \\',
        f'     "{src}" using {idx["t"]}:(abs(${idx["b"]})) skip 1 with lines title "b", \\',
        f'     "{src}" using {idx["t"]}:(abs(${idx["ubar"]})) skip 1 with lines title "ubar"',
        "unset multiplot",
        "",
    ]
    return "\n".join(lines)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_trace(columns: dict, path) -> Path:
    """Energies on a linear axis, velocity statistics on a log axis."""
    plt = _pyplot()
    t = columns["t"]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name in ("nu", "F"):
        ax1.plot(t, columns[name], label=_LABELS[name])
    ax1.set_ylabel("energy")
    ax1.legend(frameon=False)
    for name in ("f_gap", "b", "ubar"):
        y = np.abs(columns[name])
        ax2.semilogy(t, np.where(y > 0, y, np.nan), label=_LABELS[name])
    ax2.set_xlabel("t")
    ax2.set_ylabel("magnitude")
    ax2.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_certificate(report, traces, path) -> Path:
    """nu and F + hbar along every member run, with the estimated infimum."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for row, tr in zip(report.rows, traces):
        if len(tr) == 0:
            continue
        t = tr.series("t")
        (line,) = ax.plot(t, tr.series("nu"), label=row.label)
        ax.plot(t, tr.series("F") + report.h_mean, ls="--", color=line.get_color())
    if np.isfinite(report.inf_nu_est):
        ax.axhline(report.inf_nu_est, color="k", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\nu$ (solid), $F + \bar h$ (dashed)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
