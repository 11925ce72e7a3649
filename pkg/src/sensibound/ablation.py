"""Warm-start ablation harness.

Runs the KL upper-bound sweep under three conditions per DGP — warm
(default schedules), cold (identity re-init at every λ), and a
warm-started fixed-budget 1000-step reference without early stopping —
and aggregates per-λ regret against the reference, step totals, and
runtimes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import LatentSampler, SplineSpec
from .frontier import (LambdaGrid, SweepConfig, build_problem, regret_vs_reference,
                       sweep_queries)
from .gtsm import GtsmSpec, F_KL
from .prior import PriorConfig, sample_dataset, sample_queries, sample_scm
from .seeds import derive_key

CONDITIONS = ("warm", "cold", "reference")


def ablation_configs(n_bins: int = 8, k_train: int = 128, k_eval: int = 1024):
    """The three sweep configurations of the warm-start study."""
    fs = SplineSpec(n_bins=n_bins)
    base = dict(flow_spec=fs, k_train=k_train, k_eval=k_eval)
    return {
        "warm": SweepConfig(warm_start=True, **base),
        "cold": SweepConfig(warm_start=False, **base),
        "reference": SweepConfig(warm_start=True, base_max_steps=1000,
                                 step_cap=1.0, early_stop=None, **base),
    }


@dataclass
class AblationResult:
    lambdas: np.ndarray
    regret: dict                 # condition -> (n_dgps, n_lambda) mean over queries
    steps: dict                  # condition -> (n_dgps, n_lambda)
    runtime: dict                # condition -> total seconds
    n_dgps: int
    n_queries: int

    def mean_regret(self, condition: str) -> np.ndarray:
        return self.regret[condition].mean(axis=0)

    def total_steps(self, condition: str) -> int:
        return int(self.steps[condition].sum())

    @property
    def step_reduction(self) -> float:
        """Fractional optimizer-step saving of warm starts over cold."""
        return 1.0 - self.total_steps("warm") / self.total_steps("cold")

    def regret_gap_se(self):
        """Mean warm−cold regret gap and its standard error across DGPs."""
        diff = (self.regret["warm"] - self.regret["cold"]).mean(axis=1)
        return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(len(diff)))


def run_one_dgp(master_seed: int, dgp_id: int, n_obs: int, n_query_rows: int,
                prior: PriorConfig, grid: LambdaGrid, configs=None) -> dict:
    """All three conditions for one DGP; returns per-λ regret/step arrays."""
    configs = configs or ablation_configs()
    scm = sample_scm(prior, derive_key(master_seed, "dgp", dgp_id))
    ds = sample_dataset(scm, n_obs, master_seed)
    queries = sample_queries(scm, ds, n_query_rows, master_seed)
    sampler = LatentSampler("sobol", derive_key(master_seed, "sampler", dgp_id))
    problems = [build_problem(scm, q, sampler) for q in queries]
    spec = GtsmSpec(F_KL)

    curves = {}
    runtimes = {}
    for name in CONDITIONS:
        t0 = time.time()
        curves[name] = sweep_queries(scm, queries, spec, grid, configs[name],
                                     sampler, "upper", problems=problems)
        runtimes[name] = time.time() - t0

    out = {"runtime": runtimes, "regret": {}, "steps": {}}
    ref = curves["reference"]
    for name in CONDITIONS:
        regrets = np.array([regret_vs_reference(c, r)
                            for c, r in zip(curves[name], ref)])
        out["regret"][name] = regrets.mean(axis=0)
        out["steps"][name] = np.array([p.steps_used for p in curves[name][0].points])
    return out


def run_ablation(master_seed: int, n_dgps: int = 16, n_queries: int = 32,
                 n_obs: int = 1024, prior: PriorConfig | None = None,
                 grid: LambdaGrid | None = None, configs=None,
                 map_fn=map) -> AblationResult:
    """The full warm-vs-cold-vs-reference study over n_dgps DGPs."""
    if n_queries % 2:
        raise ValueError("n_queries must be even (queries come in arm pairs)")
    prior = prior or PriorConfig(n_obs=n_obs)
    grid = grid or LambdaGrid()
    args = [(master_seed, i, n_obs, n_queries // 2, prior, grid, configs)
            for i in range(n_dgps)]
    rows = list(map_fn(_run_one_star, args))
    result = AblationResult(
        lambdas=grid.values,
        regret={c: np.array([r["regret"][c] for r in rows]) for c in CONDITIONS},
        steps={c: np.array([r["steps"][c] for r in rows]) for c in CONDITIONS},
        runtime={c: float(sum(r["runtime"][c] for r in rows)) for c in CONDITIONS},
        n_dgps=n_dgps, n_queries=n_queries)
    return result


def _run_one_star(args):
    return run_one_dgp(*args)


def write_report(result: AblationResult, report_dir) -> dict:
    """Delimited tables, figures, and a summary for the ablation run."""
    from . import report

    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    regrets = {c: result.mean_regret(c) for c in CONDITIONS}
    steps = {c: result.steps[c].mean(axis=0) for c in CONDITIONS}
    totals = {c: {"steps": result.total_steps(c),
                  "runtime": result.runtime[c],
                  "mean_regret": float(result.mean_regret(c).mean())}
              for c in CONDITIONS}
    paths = {
        "regret_table": report.write_regret_table(
            report_dir / "regret_table.csv", result.lambdas, regrets),
        "totals": report.write_totals(report_dir / "totals.csv", totals),
        "regret_figure": report.render_regret_figure(
            report_dir / "regret.png", result.lambdas, regrets),
        "steps_figure": report.render_steps_figure(
            report_dir / "steps.png", result.lambdas, steps),
    }
    gap, se = result.regret_gap_se()
    summary = {
        "n_dgps": result.n_dgps,
        "n_queries": result.n_queries,
        "total_steps": {c: result.total_steps(c) for c in CONDITIONS},
        "step_reduction_warm_vs_cold": result.step_reduction,
        "mean_regret": {c: float(result.mean_regret(c).mean()) for c in CONDITIONS},
        "regret_gap_warm_minus_cold": gap,
        "regret_gap_se": se,
        "runtime_seconds": result.runtime,
    }
    with open(report_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    paths["summary"] = report_dir / "summary.json"
    return {"summary": summary, "paths": paths}
