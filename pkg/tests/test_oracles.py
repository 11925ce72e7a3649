from __future__ import annotations

import numpy as np
import pytest

from sensibound.flow import LatentSampler
from sensibound.gtsm import F_KL, GtsmSpec, MSM, ROSENBAUM
from sensibound.oracles import (brute_force_bound, manski_bounds,
                                msm_bounds_from_draws, msm_closed_form)
from sensibound.prior import sample_dataset, sample_queries, sample_scm


class _StubMap:
    """Minimal outcome map: any vectorized monotone callable."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, u):
        return self.fn(np.asarray(u, dtype=float))


class _StubScm:
    def __init__(self, pi, fn):
        self.pi = pi
        self.fn = fn

    def propensity(self, x, a):
        return self.pi if a == 1 else 1.0 - self.pi

    def outcome_map(self, x, a):
        return _StubMap(self.fn)


def _query():
    from sensibound.prior import QueryPoint

    return QueryPoint(0, np.zeros(3), 1)


class TestManski:
    def test_affine_outcome_direct_substitution(self, sampler):
        # π = 0.5, Q0 = 0, sup f = 1, inf f = −1 on the search range
        scm = _StubScm(0.5, lambda u: u / 8.0)
        lo, hi = manski_bounds(scm, _query(), 4096, sampler)
        assert lo == pytest.approx(-0.5, abs=1e-3)
        assert hi == pytest.approx(0.5, abs=1e-3)

    def test_full_propensity_limit(self, sampler):
        scm = _StubScm(0.9999, lambda u: np.tanh(u))
        lo, hi = manski_bounds(scm, _query(), 8192, sampler)
        q0 = np.tanh(sampler.normal(8192, stream=("oracle-q0", 0))).mean()
        assert abs(lo - q0) < 5e-4 and abs(hi - q0) < 5e-4

    def test_monotone_outcome_sup_at_edge(self, scm, queries, sampler):
        q = queries[1]
        fmap = scm.outcome_map(q.x, q.a)
        pi = scm.propensity(q.x, q.a)
        lo, hi = manski_bounds(scm, q, 65536, sampler)
        u = sampler.normal(65536, stream=("oracle-q0", q.query_id))
        q0 = fmap(u).mean()
        assert hi == pytest.approx(pi * q0 + (1 - pi) * fmap(8.0), abs=1e-3)
        assert lo == pytest.approx(pi * q0 + (1 - pi) * fmap(-8.0), abs=1e-3)


class TestMsmClosedForm:
    def test_gamma_one_collapses(self, scm, queries, sampler):
        q = queries[1]
        lo, hi = msm_closed_form(scm, q, 1.0, 4096, sampler)
        u = sampler.normal(4096, stream=("oracle-q0", q.query_id))
        q0 = scm.outcome_map(q.x, q.a)(u).mean()
        assert lo == pytest.approx(q0, abs=1e-12)
        assert hi == pytest.approx(q0, abs=1e-12)

    def test_gamma_below_floor_rejected(self, scm, queries, sampler):
        with pytest.raises(ValueError):
            msm_closed_form(scm, queries[0], 0.5, 256, sampler)

    def test_large_gamma_reaches_manski(self, sampler):
        scm = _StubScm(0.5, lambda u: np.tanh(u))
        q = _query()
        lo_m, hi_m = manski_bounds(scm, q, 65536, sampler)
        lo, hi = msm_closed_form(scm, q, 1e6, 65536, sampler)
        assert abs(hi - hi_m) < 1e-2
        assert abs(lo - lo_m) < 1e-2

    def test_threshold_quantile_at_gamma_one(self):
        # τ = Γ/(Γ+1) pins the threshold at the median when Γ = 1
        fs = np.sort(np.random.default_rng(0).standard_normal(4096))
        value = msm_bounds_from_draws(0.0, fs.mean(), fs, 1.0)
        assert value[0] == pytest.approx(fs.mean())
        assert value[1] == pytest.approx(fs.mean())

    def test_monotone_and_continuous_in_gamma(self, scm, queries, sampler):
        q = queries[3]
        lo_m, hi_m = manski_bounds(scm, q, 8192, sampler)
        gap = hi_m - lo_m
        gammas = np.linspace(1.0, 6.0, 21)
        prev = None
        for g in gammas:
            lo, hi = msm_closed_form(scm, q, g, 8192, sampler)
            if prev is not None:
                assert hi >= prev[1] - 1e-9 and lo <= prev[0] + 1e-9
                assert abs(hi - prev[1]) <= gap and abs(lo - prev[0]) <= gap
            prev = (lo, hi)


class TestBruteForce:
    def test_msm_agrees_with_closed_form(self, scm, queries, sampler):
        q = queries[1]
        cf = msm_closed_form(scm, q, 2.0, 1 << 16, sampler)
        bf = brute_force_bound(scm, q, GtsmSpec(MSM), 2.0, 2001)
        assert abs(cf[0] - bf[0]) < 1e-3
        assert abs(cf[1] - bf[1]) < 1e-3

    def test_kl_zero_gamma_is_point_identified(self, scm, queries):
        from sensibound.flow import log_phi

        q = queries[2]
        lo, hi = brute_force_bound(scm, q, GtsmSpec(F_KL), 0.0, 501)
        u = np.linspace(-6, 6, 501)
        w = np.exp(log_phi(u))
        w /= w.sum()
        q0 = float(np.sum(w * scm.outcome_map(q.x, q.a)(u)))
        assert lo == pytest.approx(q0, abs=1e-12)
        assert hi == pytest.approx(q0, abs=1e-12)

    def test_kl_monotone_in_gamma(self, scm, queries):
        q = queries[2]
        prev = None
        for g in (0.05, 0.1, 0.2, 0.5):
            b = brute_force_bound(scm, q, GtsmSpec(F_KL), g, 801)
            if prev is not None:
                assert b[1] >= prev[1] - 1e-9
                assert b[0] <= prev[0] + 1e-9
            prev = b

    def test_infeasible_gamma_rejected(self, scm, queries):
        with pytest.raises(ValueError):
            brute_force_bound(scm, queries[0], GtsmSpec(MSM), 0.8, 501)
        with pytest.raises(ValueError):
            brute_force_bound(scm, queries[0], GtsmSpec(F_KL), -0.1, 501)

    def test_grid_and_kind_validation(self, scm, queries):
        with pytest.raises(ValueError):
            brute_force_bound(scm, queries[0], GtsmSpec(MSM), 2.0, 51)
        with pytest.raises(ValueError):
            brute_force_bound(scm, queries[0], GtsmSpec(ROSENBAUM), 2.0, 501)


class TestOrdering:
    @pytest.mark.parametrize("seed", [11, 12, 13])
    def test_oracles_nest_inside_manski(self, prior_config, sampler, seed):
        scm = sample_scm(prior_config, seed)
        ds = sample_dataset(scm, 128, seed)
        q = sample_queries(scm, ds, 1, seed)[1]
        lo_m, hi_m = manski_bounds(scm, q, 16384, sampler)
        u = sampler.normal(16384, stream=("oracle-q0", q.query_id))
        f = scm.outcome_map(q.x, q.a)(u)
        q0 = f.mean()
        tol = 3 * f.std() / np.sqrt(f.size)
        for gamma in (1.5, 3.0):
            lo, hi = msm_closed_form(scm, q, gamma, 16384, sampler)
            assert lo - tol <= q0 <= hi + tol
            assert lo >= lo_m - tol and hi <= hi_m + tol
        for gamma in (0.1, 0.5):
            lo, hi = brute_force_bound(scm, q, GtsmSpec(F_KL), gamma, 801)
            assert lo - tol <= q0 <= hi + tol
            assert lo >= lo_m - tol and hi <= hi_m + tol
