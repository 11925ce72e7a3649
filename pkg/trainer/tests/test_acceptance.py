"""Toy-scale trainer acceptance: 64 training / 16 held-out DGPs with
analytic MSM labels.  Run with -s for the PASS/FAIL line; expect ~20-40
minutes on one CPU."""

from __future__ import annotations

import time

import numpy as np
import pytest

from sensibound_trainer.train import TrainerConfig, evaluate, train

from conftest import make_corpus

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def toy_corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("toy"), n_dgps=80,
                       n_queries=64, seed=1234, grid_size=50)


def test_toy_pfn_acceptance(toy_corpus, tmp_path):
    t0 = time.time()
    config = TrainerConfig(max_epochs=60, seed=0)
    ckpt, history = train(config, toy_corpus, tmp_path / "run",
                          dgp_ids=list(range(64)))
    train_losses = [row["train_loss"] for row in history]
    first5_decreasing = all(train_losses[i + 1] < train_losses[i]
                            for i in range(4))

    metrics = evaluate(ckpt, toy_corpus, dgp_ids=list(range(64, 80)),
                       max_queries_per_dgp=24)
    violations = metrics["violation_fraction"]
    cov_lower = metrics["lower"]["coverage90"]
    cov_upper = metrics["upper"]["coverage90"]
    elapsed = time.time() - t0

    passed = (first5_decreasing and violations < 0.01
              and 0.80 <= cov_lower <= 0.97 and 0.80 <= cov_upper <= 0.97
              and elapsed < 4 * 3600)
    line = (f"[{'PASS' if passed else 'FAIL'}] toy PFN: loss first 5 epochs "
            f"{[round(v, 3) for v in train_losses[:5]]} strictly decreasing="
            f"{first5_decreasing}; violation fraction {violations:.4%} < 1%; "
            f"coverage@90 lower {cov_lower:.3f} upper {cov_upper:.3f} in "
            f"[0.80, 0.97]; one-sided failures "
            f"{metrics['lower']['failure_rate_low']:.3f}/"
            f"{metrics['upper']['failure_rate_high']:.3f}; "
            f"runtime {elapsed:.0f}s < 4h")
    print(f"\n{line}", flush=True)
    assert passed, line
