from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from sensibound.ablation import (CONDITIONS, ablation_configs, run_ablation,
                                 write_report)
from sensibound.frontier import LambdaGrid, SweepConfig
from sensibound.flow import SplineSpec


@pytest.fixture(scope="module")
def tiny_result():
    # shrunken grid and budgets; the acceptance suite runs the full study
    fs = SplineSpec(n_bins=8)
    base = dict(flow_spec=fs, k_train=64, k_eval=256)
    configs = {
        "warm": SweepConfig(warm_start=True, base_max_steps=150, **base),
        "cold": SweepConfig(warm_start=False, base_max_steps=150, **base),
        "reference": SweepConfig(warm_start=True, base_max_steps=400,
                                 step_cap=1.0, early_stop=None, **base),
    }
    grid = LambdaGrid(lambda_max=2.0, lambda_min=0.08, n_points=8)
    return run_ablation(3, n_dgps=2, n_queries=4, n_obs=128, grid=grid,
                        configs=configs)


class TestAblation:
    def test_warm_uses_fewer_steps(self, tiny_result):
        assert tiny_result.total_steps("warm") < tiny_result.total_steps("cold")

    def test_reference_self_regret_zero(self, tiny_result):
        assert np.abs(tiny_result.regret["reference"]).max() == 0.0

    def test_cold_regret_not_below_warm(self, tiny_result):
        gap, se = tiny_result.regret_gap_se()
        assert gap <= se

    def test_regrets_nonnegative_within_noise(self, tiny_result):
        # Adam's final iterate is not the best iterate, so tiny negative
        # regrets against the fixed-budget reference are optimizer noise
        for cond in ("warm", "cold"):
            assert tiny_result.regret[cond].min() > -0.01

    def test_odd_query_count_rejected(self):
        with pytest.raises(ValueError):
            run_ablation(0, n_dgps=1, n_queries=3, n_obs=64)


class TestReport:
    def test_default_grid_report_has_fifty_rows_per_condition(self, tmp_path):
        from sensibound.ablation import AblationResult

        grid = LambdaGrid()          # the 50-point default used by the CLI
        rng = np.random.default_rng(0)
        n = grid.n_points
        result = AblationResult(
            lambdas=grid.values,
            regret={c: np.abs(rng.normal(0, 1e-3, (2, n))) for c in CONDITIONS},
            steps={c: rng.integers(100, 700, (2, n)) for c in CONDITIONS},
            runtime={c: 1.0 for c in CONDITIONS},
            n_dgps=2, n_queries=4)
        out = write_report(result, tmp_path / "report")
        rows = list(csv.DictReader(open(out["paths"]["regret_table"])))
        by_cond = {c: sum(r["condition"] == c for r in rows) for c in CONDITIONS}
        assert by_cond == {c: 50 for c in CONDITIONS}

    def test_report_files(self, tiny_result, tmp_path):
        out = write_report(tiny_result, tmp_path / "report")
        paths = out["paths"]
        rows = list(csv.DictReader(open(paths["regret_table"])))
        assert len(rows) == len(CONDITIONS) * len(tiny_result.lambdas)
        assert {r["condition"] for r in rows} == set(CONDITIONS)
        totals = list(csv.DictReader(open(paths["totals"])))
        assert len(totals) == len(CONDITIONS)
        assert paths["regret_figure"].exists()
        assert paths["steps_figure"].exists()
        summary = json.loads((tmp_path / "report" / "summary.json").read_text())
        assert set(summary) >= {"step_reduction_warm_vs_cold",
                                "regret_gap_warm_minus_cold", "total_steps"}
