from __future__ import annotations

import numpy as np
import pytest

from sensibound import gtsm
from sensibound.flow import LatentSampler, SplineFlowParams
from sensibound.gtsm import (DivergenceEstimate, DivergenceNumericsError,
                             F_KL, GtsmSpec, MSM, ROSENBAUM, density_ratio,
                             divergence_mc, divergence_quadrature, f_kl_on_grid,
                             log_phi)

from conftest import fit_gaussian_shift


def random_flow(seed, scale=0.6):
    return SplineFlowParams.random(np.random.default_rng(seed), scale=scale)


class TestDensityRatio:
    def test_identity_flow_unit_ratio(self):
        p = SplineFlowParams.identity()
        u = np.linspace(-8, 8, 33)
        assert np.abs(density_ratio(p, u) - 1.0).max() < 1e-12

    def test_gaussian_shift_ratio(self):
        p = fit_gaussian_shift(0.5)
        # ν ≈ N(0.5, 1) gives r(u) = exp(0.5u − 0.125)
        assert density_ratio(p, 0.0) == pytest.approx(np.exp(-0.125), rel=2e-3)

    def test_continuity_at_tail_boundary(self):
        p = random_flow(1)
        b = p.tail_bound
        eps = 1e-7
        inner = density_ratio(p, b - eps)
        outer = density_ratio(p, b + eps)
        assert abs(inner - outer) < 1e-3


class TestDivergenceMc:
    def test_identity_flow(self, sampler):
        p = SplineFlowParams.identity()
        assert divergence_mc(GtsmSpec(MSM), p, 256, sampler).value == pytest.approx(1.0)
        assert divergence_mc(GtsmSpec(F_KL), p, 256, sampler).value < 1e-12
        assert divergence_mc(GtsmSpec(ROSENBAUM), p, 256, sampler).value == pytest.approx(1.0)

    def test_gaussian_shift_kl(self, sampler, shift_flow_04):
        # KL(N(0.4,1)‖N(0,1)) = 0.08 in both directions
        est = divergence_mc(GtsmSpec(F_KL), shift_flow_04, 4096, sampler)
        assert est.value == pytest.approx(0.08, abs=0.02)

    def test_rejects_small_budget(self, sampler):
        with pytest.raises(ValueError):
            divergence_mc(GtsmSpec(MSM), SplineFlowParams.identity(), 1, sampler)

    def test_numerics_error_is_diagnosed(self, sampler, monkeypatch):
        p = SplineFlowParams.identity()
        monkeypatch.setattr(gtsm, "log_ratio",
                            lambda params, u: np.full(np.shape(u), np.nan))
        with pytest.raises(DivergenceNumericsError):
            divergence_mc(GtsmSpec(MSM), p, 16, sampler)

    def test_estimate_floors(self, sampler):
        for seed in range(100):
            p = random_flow(seed, scale=0.5)
            assert divergence_mc(GtsmSpec(MSM), p, 64, sampler).value >= 1.0
            assert divergence_mc(GtsmSpec(F_KL), p, 64, sampler).value >= 0.0
            assert divergence_mc(GtsmSpec(ROSENBAUM), p, 64, sampler).value >= 1.0

    def test_estimate_requires_finite(self):
        with pytest.raises(DivergenceNumericsError):
            DivergenceEstimate(value=np.nan, n_samples=8, estimator="mc")


class TestDivergenceQuadrature:
    def test_identity_flow(self):
        p = SplineFlowParams.identity()
        assert divergence_quadrature(GtsmSpec(MSM), p, 1001).value == pytest.approx(1.0)
        assert divergence_quadrature(GtsmSpec(F_KL), p, 1001).value < 1e-12
        assert divergence_quadrature(GtsmSpec(ROSENBAUM), p, 1001).value == pytest.approx(1.0)

    def test_grid_minimum(self):
        with pytest.raises(ValueError):
            divergence_quadrature(GtsmSpec(MSM), SplineFlowParams.identity(), 51)

    def test_mc_quadrature_consistency(self, sampler):
        p = random_flow(3)
        quad = divergence_quadrature(GtsmSpec(F_KL), p, 4001).value
        mc = divergence_mc(GtsmSpec(F_KL), p, 65536, sampler).value
        assert abs(quad - mc) < 0.01

    def test_msm_dominates_rosenbaum_floor(self):
        for seed in range(10):
            p = random_flow(seed + 50)
            msm = divergence_quadrature(GtsmSpec(MSM), p, 2001).value
            ros = divergence_quadrature(GtsmSpec(ROSENBAUM), p, 2001).value
            assert msm ** 2 >= ros - 1e-9


class TestKlSeparation:
    def test_zero_iff_identity(self, sampler):
        assert divergence_mc(GtsmSpec(F_KL), SplineFlowParams.identity(), 4096,
                             sampler).value < 1e-3
        found = 0
        for seed in range(20):
            p = random_flow(seed)
            if divergence_quadrature(GtsmSpec(F_KL), p, 2001).value > 0.05:
                found += 1
                assert divergence_mc(GtsmSpec(F_KL), p, 4096, sampler).value > 0.01
        assert found >= 5

    def test_convexity_on_grid(self):
        # density-mixture midpoint never exceeds the average divergence
        u = np.linspace(-10, 10, 2001)
        for seed in range(25):
            p1 = random_flow(seed)
            p2 = random_flow(seed + 1000)
            from sensibound.flow import log_density

            nu1 = np.exp(log_density(p1, u))
            nu2 = np.exp(log_density(p2, u))
            mid = f_kl_on_grid(u, 0.5 * (nu1 + nu2))
            avg = 0.5 * (f_kl_on_grid(u, nu1) + f_kl_on_grid(u, nu2))
            assert mid <= avg + 1e-6


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            GtsmSpec("chi2")

    def test_floors_by_kind(self):
        assert GtsmSpec(MSM).floor == 1.0
        assert GtsmSpec(F_KL).floor == 0.0
        assert GtsmSpec(ROSENBAUM).floor == 1.0
