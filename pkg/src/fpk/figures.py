"""Matplotlib renderings of the report artifacts.

Every file-writing CLI command drops a PNG next to its JSON/CSV outputs
(disable with --no-figures).  The figures are summaries for a quick look,
not the record of record -- the delimited outputs stay authoritative.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def condition_figure(reports, path: str):
    """Per-shell minimum margin against radius, one line per condition."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for rep in reports:
        radii = rep.sample_radii
        margins = rep.sample_margins
        shells = np.unique(radii)
        mins = [margins[radii == r].min() for r in shells]
        style = "-" if rep.passed else "--"
        ax.plot(shells, mins, style, lw=1.2,
                label=f"{rep.condition} ({'pass' if rep.passed else 'FAIL'})")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xscale("log")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.set_xlabel("radius")
    ax.set_ylabel("min margin on shell")
    ax.legend(fontsize=8)
    ax.set_title("growth condition margins")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def residual_figure(reports, path: str):
    """|residual| with its 3*stderr + allowance budget, one bar per check."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    xs = np.arange(len(reports))
    est = [abs(r.estimate) for r in reports]
    budget = [3.0 * r.stderr + r.allowance for r in reports]
    colors = ["tab:blue" if r.passed else "tab:red" for r in reports]
    ax.bar(xs, est, color=colors, width=0.6, label="|residual|")
    ax.plot(xs, budget, "k_", markersize=14, label="3*stderr + C*dt")
    ax.set_xticks(xs)
    ax.set_xticklabels(
        [f"{r.test}\nt={r.t:g}" for r in reports], fontsize=7, rotation=45
    )
    ax.set_ylabel("magnitude")
    ax.set_title("residual checks")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def particles_figure(ens, path: str):
    """Coordinate means and the alive fraction over the snapshot grid."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5.5), sharex=True)
    times = ens.times
    d = ens.positions.shape[2]
    for i in range(d):
        means = [
            ens.positions[k][ens.alive[k], i].mean() if ens.alive[k].any() else np.nan
            for k in range(len(times))
        ]
        ax1.plot(times, means, lw=1.2, label=f"x{i + 1}")
    ax1.set_ylabel("ensemble mean")
    ax1.legend(fontsize=8)
    ax2.plot(times, ens.alive.mean(axis=1), "k-", lw=1.2)
    ax2.set_ylim(-0.02, 1.02)
    ax2.set_xlabel("t")
    ax2.set_ylabel("alive fraction")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def ergodic_figure(report, path: str):
    """Ball masses over time with tail-window estimates, plus stationarity."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6))
    for ball in report.balls:
        line, = ax1.plot(report.times, ball["mass_series"], lw=1.2,
                         label=f"B_{ball['radius']:g}({','.join(f'{c:g}' for c in ball['center'])})")
        ax1.axhline(ball["mu_tilde"], color=line.get_color(), ls=":", lw=1.0)
    ax1.axvline(report.window_start, color="gray", lw=0.8, ls="--")
    ax1.set_xlabel("t")
    ax1.set_ylabel("mass")
    ax1.legend(fontsize=8)
    ax1.set_title("set masses and tail-window estimates")

    labels = [row["label"] for row in report.stationarity]
    est = [abs(row["estimate"]) for row in report.stationarity]
    budget = [3.0 * row["stderr"] + row["allowance"] for row in report.stationarity]
    xs = np.arange(len(labels))
    ax2.bar(xs, est, width=0.6, color="tab:blue")
    ax2.plot(xs, budget, "k_", markersize=12)
    ax2.set_xticks(xs)
    ax2.set_xticklabels(labels, fontsize=6, rotation=60)
    ax2.set_ylabel("|stationarity residual|")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
