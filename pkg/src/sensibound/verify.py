"""Fast invariant suites behind the `verify` CLI command.

Each suite returns CheckResult rows; the CLI prints them and exits
nonzero if any check fails.  These are smoke-level invariants (seconds),
not the full acceptance run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aggregate
from .flow import (FlowAdjoint, LatentSampler, SplineFlowParams, log_phi,
                   parameter_gradients, transform, inverse, log_density)
from .gtsm import GtsmSpec, F_KL, MSM
from .frontier import LambdaGrid, SweepConfig, sweep, frontier_at_gamma, isotonic_knots
from .flow import SplineSpec
from .oracles import brute_force_bound, manski_bounds, msm_closed_form
from .prior import PriorConfig, sample_scm, sample_dataset, sample_queries


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check(name, cond, detail=""):
    return CheckResult(name=name, passed=bool(cond), detail=detail)


def run_flow_suite(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    results = []
    p = SplineFlowParams.random(rng, n_bins=16)
    grid = np.linspace(-8, 8, 401)
    u, ldf = transform(p, grid)
    z, ldi = inverse(p, u)
    results.append(_check("flow.bijectivity", np.abs(z - grid).max() < 1e-5,
                          f"max roundtrip error {np.abs(z - grid).max():.2e}"))
    ug = np.linspace(-10, 10, 4001)
    mass = float(np.trapezoid(np.exp(log_density(p, ug)), ug))
    results.append(_check("flow.normalization", abs(mass - 1) < 1e-3,
                          f"quadrature mass {mass:.6f}"))
    zp = rng.standard_normal(9) * 2
    a, b = rng.standard_normal(9), rng.standard_normal(9)
    g = parameter_gradients(p, FlowAdjoint(z=zp, d_u=a, d_logdet=b))
    eps = 1e-5
    vec = p.to_vector()
    worst = 0.0
    for i in range(0, vec.size, 5):
        vp, vm = vec.copy(), vec.copy()
        vp[i] += eps
        vm[i] -= eps
        up_, lp_ = transform(SplineFlowParams.from_vector(vp, n_bins=16), zp)
        um_, lm_ = transform(SplineFlowParams.from_vector(vm, n_bins=16), zp)
        fd = (np.sum(a * up_ + b * lp_) - np.sum(a * um_ + b * lm_)) / (2 * eps)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), 1e-8))
    results.append(_check("flow.gradients", worst < 1e-3,
                          f"max FD relative error {worst:.2e}"))
    tail_pts = np.array([p.tail_bound + 0.5, -p.tail_bound - 2.0])
    dens_gap = np.abs(log_density(p, tail_pts) - log_phi(tail_pts)).max()
    results.append(_check("flow.tail_identity", dens_gap < 1e-12,
                          f"tail log-density gap {dens_gap:.2e}"))
    return results


def run_oracle_suite(seed: int = 0) -> list:
    results = []
    cfg = PriorConfig()
    scm = sample_scm(cfg, seed)
    ds = sample_dataset(scm, 256, seed + 1)
    q = sample_queries(scm, ds, 2, seed + 2)[1]
    samp = LatentSampler("sobol", 123)
    lo_m, hi_m = manski_bounds(scm, q, 8192, samp)
    worst = 0.0
    for gamma in (1.5, 3.0):
        cf = msm_closed_form(scm, q, gamma, 1 << 15, samp)
        bf = brute_force_bound(scm, q, GtsmSpec(MSM), gamma, 1001)
        worst = max(worst, abs(cf[0] - bf[0]), abs(cf[1] - bf[1]))
        ordered = lo_m - 1e-6 <= cf[0] <= cf[1] <= hi_m + 1e-6
        results.append(_check(f"oracles.msm_ordering_g{gamma}", ordered,
                              f"closed form {cf} within Manski ({lo_m:.3f},{hi_m:.3f})"))
    results.append(_check("oracles.msm_agreement", worst < 1e-3,
                          f"max closed-vs-brute gap {worst:.2e}"))
    kl_prev = None
    mono = True
    for gamma in (0.05, 0.2, 0.8):
        bf = brute_force_bound(scm, q, GtsmSpec(F_KL), gamma, 801)
        if kl_prev is not None:
            mono &= bf[1] >= kl_prev[1] - 1e-9 and bf[0] <= kl_prev[0] + 1e-9
        kl_prev = bf
    results.append(_check("oracles.kl_monotone", mono,
                          "KL bounds widen with gamma"))
    width_identity = abs(
        (aggregate.cate_bounds(0.0, 1.0, -1.0, 2.0)[1]
         - aggregate.cate_bounds(0.0, 1.0, -1.0, 2.0)[0]) - (1.0 + 3.0)) < 1e-12
    results.append(_check("oracles.cate_width_identity", width_identity,
                          "width(CATE) = width(arm0) + width(arm1)"))
    results.append(_check(
        "oracles.cate_example",
        aggregate.cate_bounds(0.0, 1.0, -1.0, 2.0) == (-2.0, 2.0),
        "arm bounds ([0,1],[−1,2]) give (−2, 2)"))
    return results


def run_frontier_suite(seed: int = 0) -> list:
    results = []
    cfg = PriorConfig()
    scm = sample_scm(cfg, seed)
    ds = sample_dataset(scm, 256, seed + 1)
    q = sample_queries(scm, ds, 1, seed + 2)[1]
    samp = LatentSampler("sobol", 123)
    grid = LambdaGrid(lambda_max=32.0, lambda_min=0.15, n_points=12)
    config = SweepConfig(flow_spec=SplineSpec(n_bins=8), k_train=128, k_eval=1024)
    up = sweep(scm, q, GtsmSpec(F_KL), grid, config, samp, "upper")
    lo = sweep(scm, q, GtsmSpec(F_KL), grid, config, samp, "lower")
    se0 = np.hypot(up.points[0].theta_se, up.q0_se)
    results.append(_check("frontier.collapse",
                          abs(up.thetas[0] - up.q0) < 5 * se0,
                          f"theta(λmax)-q0 = {up.thetas[0]-up.q0:.4f}"))
    gam_u = up.gammas
    ses = np.array([p.gamma_se for p in up.points])
    tol = 3 * np.hypot(ses[:-1], ses[1:])
    inversions = int(np.sum(np.diff(gam_u) < -tol))
    results.append(_check("frontier.gamma_monotone", inversions == 0,
                          f"{inversions} adjacent inversions beyond 3 s.e."))
    gu, tu = isotonic_knots(up)
    gl, tl = isotonic_knots(lo)
    nested = np.all(np.diff(tu) >= -1e-12) and np.all(np.diff(tl) <= 1e-12)
    results.append(_check("frontier.nesting", nested,
                          "isotonic curves are monotone in gamma"))
    g_lo = max(gu[0], gl[0])
    g_hi = min(gu[-1], gl[-1])
    if g_hi > g_lo:
        probe = np.linspace(g_lo, g_hi, 7)
        ordered = all(frontier_at_gamma(lo, g) <= frontier_at_gamma(up, g) + 1e-9
                      for g in probe)
    else:
        ordered = True
    results.append(_check("frontier.lower_below_upper", ordered,
                          "interpolated lower bound stays below upper"))
    return results


SUITES = {
    "flow": run_flow_suite,
    "oracles": run_oracle_suite,
    "frontier": run_frontier_suite,
}
