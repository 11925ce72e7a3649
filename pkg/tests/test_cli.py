from __future__ import annotations

import csv
import json
import os

import numpy as np
import pytest

from sensibound import aggregate, verify
from sensibound.cli import load_prior_config, main


def run(args):
    return main([str(a) for a in args])


class TestGeneratePrior:
    def test_two_dgps_make_four_files(self, tmp_path):
        out = tmp_path / "prior"
        assert run(["generate-prior", "--n-dgps", 2, "--n-queries", 4,
                    "--seed", 1, "--out-dir", out]) == 0
        files = sorted(p.name for p in out.glob("*.csv"))
        assert files == ["dataset_0.csv", "dataset_1.csv",
                         "queries_0.csv", "queries_1.csv"]
        assert (out / "manifest.json").exists()

    def test_rerun_same_seed_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run(["generate-prior", "--n-dgps", 1, "--n-queries", 4,
                 "--seed", 7, "--out-dir", out])
        assert (a / "dataset_0.csv").read_bytes() == (b / "dataset_0.csv").read_bytes()
        assert (a / "queries_0.csv").read_bytes() == (b / "queries_0.csv").read_bytes()

    def test_zero_dgps_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["generate-prior", "--n-dgps", 0, "--out-dir", tmp_path])
        assert exc.value.code == 2

    def test_env_seed_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SENSIBOUND_SEED", "42")
        out = tmp_path / "prior"
        run(["generate-prior", "--n-dgps", 1, "--n-queries", 2,
             "--out-dir", out])
        assert json.loads((out / "manifest.json").read_text())["master_seed"] == 42

    def test_config_file_overrides(self, tmp_path):
        cfg = tmp_path / "prior.cfg"
        cfg.write_text("d_x = 4\npropensity_clip = 0.05, 0.95\n# comment\n")
        overrides = load_prior_config(cfg)
        assert overrides == {"d_x": 4, "propensity_clip": (0.05, 0.95)}
        out = tmp_path / "prior"
        run(["generate-prior", "--n-dgps", 1, "--n-queries", 2,
             "--seed", 1, "--config", cfg, "--out-dir", out])
        header = open(out / "queries_0.csv").readline().strip().split(",")
        assert header == ["query_id", "x_0", "x_1", "x_2", "x_3", "a"]

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "prior.cfg"
        cfg.write_text("unknown_key = 3\n")
        with pytest.raises(ValueError):
            load_prior_config(cfg)


@pytest.fixture(scope="module")
def prior_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("prior")
    run(["generate-prior", "--n-dgps", 2, "--n-queries", 3, "--seed", 5,
         "--out-dir", out])
    return out


class TestLabel:
    def test_msm_analytic_row_count_and_range(self, prior_dir, tmp_path):
        out = tmp_path / "labels"
        assert run(["label", "--model", "msm-analytic", "--data-dir", prior_dir,
                    "--out-dir", out, "--grid-size", 10]) == 0
        rows = list(csv.DictReader(open(out / "frontier_points_0.csv")))
        assert len(rows) == 3 * 2 * 10 * 2
        gammas = np.array([float(r["gamma_star"]) for r in rows])
        assert gammas.min() >= 1.0 and gammas.max() <= 5.0
        uppers = [float(r["theta_star"]) for r in rows if r["bound_type"] == "upper"]
        lowers = [float(r["theta_star"]) for r in rows if r["bound_type"] == "lower"]
        assert len(uppers) == len(lowers)

    def test_gamma_grid_randomized_per_dgp(self, prior_dir, tmp_path):
        out = tmp_path / "labels"
        run(["label", "--model", "msm-analytic", "--data-dir", prior_dir,
             "--out-dir", out, "--grid-size", 10])
        g0 = {r["gamma_star"] for r in csv.DictReader(open(out / "frontier_points_0.csv"))}
        g1 = {r["gamma_star"] for r in csv.DictReader(open(out / "frontier_points_1.csv"))}
        assert g0 != g1

    def test_kl_sweep_labels(self, prior_dir, tmp_path):
        out = tmp_path / "labels"
        assert run(["label", "--model", "kl-sweep", "--data-dir", prior_dir,
                    "--out-dir", out, "--grid-size", 4, "--k-eval", 512,
                    "--n-bins", 8]) == 0
        rows = list(csv.DictReader(open(out / "frontier_points_0.csv")))
        assert len(rows) == 3 * 2 * 4 * 2
        # per-λ diagnostics and warm-start checkpoints are written alongside
        assert (out / "logs" / "sweep_0_upper.jsonl").exists()
        assert (out / "checkpoints" / "flow_0_upper.npz").exists()

    def test_missing_prior_files_fail(self, tmp_path):
        assert run(["label", "--model", "msm-analytic",
                    "--data-dir", tmp_path / "nowhere"]) == 1

    def test_existing_labels_refused_without_overwrite(self, prior_dir, tmp_path):
        out = tmp_path / "labels"
        args = ["label", "--model", "msm-analytic", "--data-dir", prior_dir,
                "--out-dir", out, "--grid-size", 5]
        assert run(args) == 0
        first = (out / "frontier_points_0.csv").read_bytes()
        assert run(args) == 1
        assert run(args + ["--overwrite"]) == 0
        assert (out / "frontier_points_0.csv").read_bytes() == first

    def test_parallel_workers_match_serial(self, prior_dir, tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        base = ["label", "--model", "msm-analytic", "--data-dir", prior_dir,
                "--grid-size", 5]
        assert run(base + ["--out-dir", serial, "--workers", 1]) == 0
        assert run(base + ["--out-dir", parallel, "--workers", 2]) == 0
        for i in (0, 1):
            assert (serial / f"frontier_points_{i}.csv").read_bytes() == \
                (parallel / f"frontier_points_{i}.csv").read_bytes()

    def test_defaults_match_paper_grids(self):
        from sensibound.cli import build_parser

        args = build_parser().parse_args(
            ["label", "--model", "kl-sweep", "--data-dir", "x"])
        assert (args.lambda_max, args.lambda_min, args.grid_size) == (2.0, 0.08, 50)
        assert (args.gamma_min, args.gamma_max) == (1.0, 5.0)
        assert args.warm_start is True
        args = build_parser().parse_args(
            ["label", "--model", "kl-sweep", "--data-dir", "x", "--no-warm-start"])
        assert args.warm_start is False


class TestVerify:
    @pytest.mark.parametrize("suite", ["flow", "oracles", "frontier"])
    def test_suites_pass_on_fresh_checkout(self, suite):
        assert run(["verify", "--suite", suite]) == 0

    def test_unknown_suite_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["verify", "--suite", "everything"])
        assert exc.value.code == 2

    def test_injected_sign_bug_fails_oracle_suite(self, monkeypatch):
        real = aggregate.cate_bounds

        def buggy(l0, u0, l1, u1):
            lo, hi = real(l0, u0, l1, u1)
            return (-lo, -hi) if lo != hi else (lo, hi)

        monkeypatch.setattr(aggregate, "cate_bounds", buggy)
        assert run(["verify", "--suite", "oracles"]) == 1
