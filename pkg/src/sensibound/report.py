"""Report rendering: delimited tables plus matplotlib figures.

The ablation report directory receives regret_table.csv / totals.csv and
PNG figures for the regret curves and step budgets; the frontier plot is
shared by the demo path and tests.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_regret_table(path, lambdas, regrets_by_condition) -> Path:
    """Per-λ mean regret rows, one line per (condition, λ)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["condition", "sweep_index", "lambda", "mean_regret"])
        for cond, regrets in regrets_by_condition.items():
            for i, (lam, reg) in enumerate(zip(lambdas, regrets)):
                wr.writerow([cond, i, format(lam, ".17g"), format(reg, ".17g")])
    return path


def write_totals(path, totals) -> Path:
    """Step and runtime totals per condition."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["condition", "total_steps", "runtime_seconds", "mean_regret"])
        for cond, row in totals.items():
            wr.writerow([cond, row["steps"], format(row["runtime"], ".3f"),
                         format(row["mean_regret"], ".17g")])
    return path


def render_regret_figure(path, lambdas, regrets_by_condition) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = np.arange(len(lambdas))
    for cond, regrets in regrets_by_condition.items():
        ax.plot(idx, regrets, marker="o", markersize=3, label=cond)
    ax.set_xlabel("sweep index (λ descending)")
    ax.set_ylabel("mean objective regret vs reference")
    ax.set_title("Warm-start ablation: per-λ regret")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_steps_figure(path, lambdas, steps_by_condition) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = np.arange(len(lambdas))
    for cond, steps in steps_by_condition.items():
        ax.step(idx, steps, where="mid", label=f"{cond} (total {int(np.sum(steps))})")
    ax.set_xlabel("sweep index (λ descending)")
    ax.set_ylabel("optimizer steps at λ")
    ax.set_title("Warm-start ablation: step budgets")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_frontier_figure(path, curves, oracle_points=None) -> Path:
    """Γ-θ frontier traces, optionally with oracle reference markers."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for curve in curves:
        label = f"query {curve.query_id} {curve.bound_type}"
        ax.plot(curve.gammas, curve.thetas, marker=".", markersize=4, label=label)
        ax.axhline(curve.q0, color="gray", lw=0.6, ls=":")
    if oracle_points:
        g, th = zip(*oracle_points)
        ax.plot(g, th, "kx", markersize=7, label="oracle")
    ax.set_xlabel("sensitivity level Γ*")
    ax.set_ylabel("bound θ* (normalized outcome)")
    ax.set_title("Pareto frontier traces")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
