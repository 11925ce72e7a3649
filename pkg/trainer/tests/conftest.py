from __future__ import annotations

import subprocess
import sys

import pytest


def make_corpus(out_dir, n_dgps, n_queries, seed, grid_size=12):
    """Build a labeled corpus through the upstream CLI (the file contract
    is the only interface the trainer may consume)."""
    run = [sys.executable, "-m", "sensibound.cli"]
    subprocess.run(run + ["generate-prior", "--n-dgps", str(n_dgps),
                          "--n-queries", str(n_queries), "--seed", str(seed),
                          "--out-dir", str(out_dir)],
                   check=True, capture_output=True)
    subprocess.run(run + ["label", "--model", "msm-analytic",
                          "--data-dir", str(out_dir),
                          "--grid-size", str(grid_size)],
                   check=True, capture_output=True)
    return out_dir


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"), n_dgps=6,
                       n_queries=8, seed=77)
