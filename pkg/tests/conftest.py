from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import minimize

from sensibound.flow import (FlowAdjoint, LatentSampler, SplineFlowParams,
                             parameter_gradients, transform)
from sensibound.prior import PriorConfig, sample_dataset, sample_queries, sample_scm


@pytest.fixture(scope="session")
def prior_config():
    return PriorConfig()


@pytest.fixture(scope="session")
def scm(prior_config):
    return sample_scm(prior_config, 7)


@pytest.fixture(scope="session")
def dataset(scm):
    return sample_dataset(scm, 1024, 3)


@pytest.fixture(scope="session")
def queries(scm, dataset):
    return sample_queries(scm, dataset, 4, 11)


@pytest.fixture(scope="session")
def sampler():
    return LatentSampler("sobol", 123)


def fit_gaussian_shift(mu: float, n_bins: int = 16, tail_bound: float = 6.0):
    """Flow whose pushforward approximates N(mu, 1) on the spline range.

    Fits T(z) ≈ z + mu on |z| ≤ 4.5 by least squares with the analytic
    parameter gradients; the tails keep the base density.
    """
    zg = np.linspace(-4.5, 4.5, 301)
    target = zg + mu
    base = SplineFlowParams.identity(n_bins=n_bins, tail_bound=tail_bound)

    def loss_grad(vec):
        p = SplineFlowParams.from_vector(vec, n_bins=n_bins, tail_bound=tail_bound)
        u, _ = transform(p, zg)
        res = u - target
        grad = parameter_gradients(
            p, FlowAdjoint(z=zg, d_u=2 * res, d_logdet=np.zeros_like(zg)))
        return float(np.sum(res ** 2)), grad

    out = minimize(loss_grad, base.to_vector(), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    assert out.fun < 1e-4, "shift-flow fit did not converge"
    return SplineFlowParams.from_vector(out.x, n_bins=n_bins, tail_bound=tail_bound)


@pytest.fixture(scope="session")
def shift_flow_04():
    return fit_gaussian_shift(0.4)
