from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from sensibound.prior import (OutcomeDomainError, PriorConfig, QueryPoint,
                              point_identified_capo, sample_dataset,
                              sample_queries, sample_scm)


class TestConfig:
    def test_defaults_match_contract(self, prior_config):
        assert prior_config.d_x == 10
        assert prior_config.n_obs == 1024

    @pytest.mark.parametrize("bad", [
        dict(propensity_clip=(0.0, 0.98)),
        dict(propensity_clip=(0.9, 0.1)),
        dict(normalize_eps=0.0),
        dict(weight_scale=-1.0),
        dict(hidden_widths=(0, 32)),
        dict(noise_scale_range=(2.0, 1.0)),
    ])
    def test_invalid_configs(self, bad):
        with pytest.raises(ValueError):
            PriorConfig(**bad)


class TestSampleScm:
    def test_seed_determinism(self, prior_config):
        a = sample_scm(prior_config, 7)
        b = sample_scm(prior_config, 7)
        for la, lb in zip(a.f_y_params, b.f_y_params):
            assert np.array_equal(la[0], lb[0]) and np.array_equal(la[1], lb[1])
        assert a.y_shift_scale == b.y_shift_scale

    @pytest.mark.parametrize("seed", [7, 19, 31])
    def test_propensity_respects_clip(self, prior_config, seed):
        scm = sample_scm(prior_config, seed)
        rng = np.random.default_rng(seed)
        x = scm.sample_x(10_000, rng)
        p = scm.propensity(x, 1)
        lo, hi = prior_config.propensity_clip
        assert p.min() >= lo and p.max() <= hi

    def test_pilot_normalization(self, scm):
        ds = sample_dataset(scm, 10_000, 5)
        assert abs(ds.y.mean()) < 0.1
        assert abs(ds.y.std() - 1.0) < 0.1


class TestPropensity:
    def test_complement_exact(self, scm):
        rng = np.random.default_rng(1)
        x = scm.sample_x(10_000, rng)
        p1 = scm.propensity(x, 1)
        p0 = scm.propensity(x, 0)
        assert np.all(p0 + p1 == 1.0)

    def test_zero_logits_give_half(self, prior_config):
        scm = sample_scm(prior_config, 3)
        for w, b in scm.f_a_params:
            w[:] = 0.0
            b[:] = 0.0
        assert scm.propensity(np.zeros(prior_config.d_x), 1) == pytest.approx(0.5)

    def test_rejects_non_finite(self, scm):
        with pytest.raises(ValueError):
            scm.propensity(np.full(scm.config.d_x, np.inf), 1)


class TestDataset:
    def test_single_row(self, scm):
        ds = sample_dataset(scm, 1, 3)
        assert len(ds) == 1
        assert ds.a[0] in (0, 1)

    def test_rejects_empty(self, scm):
        with pytest.raises(ValueError):
            sample_dataset(scm, 0, 3)

    def test_determinism(self, scm):
        a = sample_dataset(scm, 1024, 3)
        b = sample_dataset(scm, 1024, 3)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_marginal_treatment_rate(self, scm):
        ds = sample_dataset(scm, 100_000, 3)
        expected = scm.propensity(ds.x, 1).mean()
        assert abs(ds.a.mean() - expected) < 0.02

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_both_arms_present(self, prior_config, seed):
        scm = sample_scm(prior_config, seed)
        ds = sample_dataset(scm, 64, seed)
        assert set(np.unique(ds.a)) == {0, 1}

    def test_latent_law_is_standard_normal(self, scm):
        # Kolmogorov-Smirnov on the latent draws conditional on each arm
        rng = np.random.default_rng(9)
        x = scm.sample_x(10_000, rng)
        p1 = scm.propensity(x, 1)
        a = (rng.random(10_000) < p1).astype(int)
        u = rng.standard_normal(10_000)
        for arm in (0, 1):
            stat = stats.kstest(u[a == arm], "norm")
            assert stat.pvalue > 0.001


class TestOutcome:
    def test_roundtrip_examples(self, scm, dataset):
        x = dataset.x[0]
        for u0 in (-3.0, 0.0, 3.0):
            y = scm.outcome(x, u0, 1)
            assert abs(scm.outcome_inverse(x, y, 1) - u0) < 1e-6

    def test_strictly_increasing(self, scm, dataset):
        om = scm.outcome_map(dataset.x[1], 0)
        u = np.linspace(-6, 6, 201)
        assert np.all(np.diff(om(u)) > 0)
        assert np.all(om.deriv(u) > 0)

    def test_inverse_matches_bisection_oracle(self, scm, dataset):
        om = scm.outcome_map(dataset.x[2], 1)
        y = om(np.array([1.234]))[()]

        lo, hi = -12.0, 12.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if om(mid) < y:
                lo = mid
            else:
                hi = mid
        assert abs(om.inverse(y) - 0.5 * (lo + hi)) < 1e-6

    def test_roundtrip_grid(self, prior_config):
        scm = sample_scm(prior_config, 21)
        ds = sample_dataset(scm, 64, 1)
        worst = 0.0
        u = np.linspace(-6, 6, 201)
        for i in range(16):
            for arm in (0, 1):
                om = scm.outcome_map(ds.x[i], arm)
                worst = max(worst, np.abs(om.inverse(om(u)) - u).max())
        assert worst < 1e-6

    def test_domain_error_outside_image(self, scm, dataset):
        om = scm.outcome_map(dataset.x[0], 1)
        lo, hi = om.image
        with pytest.raises(OutcomeDomainError):
            om.inverse(hi + 0.25)
        with pytest.raises(OutcomeDomainError):
            om.inverse(lo - 0.25)

    def test_rejects_non_finite_latent(self, scm, dataset):
        with pytest.raises(ValueError):
            scm.outcome(dataset.x[0], np.inf, 1)


class _ConstantOutcome:
    def __init__(self, value):
        self.value = value

    def outcome(self, x, u, a):
        return np.full_like(np.asarray(u, dtype=float), self.value)


class _LatentOutcome:
    def outcome(self, x, u, a):
        return np.asarray(u, dtype=float)


class TestPointIdentifiedCapo:
    def test_constant_outcome(self):
        q = QueryPoint(0, np.zeros(3), 1)
        assert point_identified_capo(_ConstantOutcome(2.5), q, 16, 0) == 2.5

    def test_standard_normal_mean(self):
        q = QueryPoint(0, np.zeros(3), 1)
        k = 4096
        assert abs(point_identified_capo(_LatentOutcome(), q, k, 1)) < 3 / np.sqrt(k)

    def test_budget_consistency(self, scm, queries):
        q = queries[1]
        small = point_identified_capo(scm, q, 4096, 5)
        big = point_identified_capo(scm, q, 1 << 20, 5)
        u = np.random.default_rng(0).standard_normal(4096)
        sigma = np.std(scm.outcome(q.x, u, q.a))
        assert abs(small - big) < 4 * sigma / np.sqrt(4096)

    def test_rejects_zero_budget(self, scm, queries):
        with pytest.raises(ValueError):
            point_identified_capo(scm, queries[0], 0, 1)


class TestSampleQueries:
    def test_single_row_expands_both_arms(self, scm, dataset):
        qs = sample_queries(scm, dataset, 1, 2)
        assert len(qs) == 2
        assert {q.a for q in qs} == {0, 1}
        assert np.array_equal(qs[0].x, qs[1].x)

    def test_paper_scale_counts(self, scm, dataset):
        qs = sample_queries(scm, dataset, 2048, 2)
        assert len(qs) == 4096
        assert len({q.query_id for q in qs}) == 4096

    def test_determinism(self, scm, dataset):
        a = sample_queries(scm, dataset, 5, 4)
        b = sample_queries(scm, dataset, 5, 4)
        assert all(np.array_equal(x.x, y.x) and x.a == y.a
                   for x, y in zip(a, b))

    def test_queries_drawn_from_dataset(self, scm, dataset):
        qs = sample_queries(scm, dataset, 8, 4)
        rows = {tuple(r) for r in dataset.x}
        assert all(tuple(q.x) in rows for q in qs)
