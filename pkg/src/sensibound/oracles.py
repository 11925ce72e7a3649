"""Independent reference solutions for the frontier engine.

Three routes that never touch the flow or the sweep: the no-assumptions
Manski limits, the closed-form MSM bound (threshold/quantile argument),
and a discretized convex program solved by projected gradient that works
for any divergence expressed on a latent grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .flow import LatentSampler, log_phi
from .gtsm import GtsmSpec, MSM, F_KL
from .prior import QueryPoint

_MANSKI_GRID = 2001
_MANSKI_RANGE = 8.0


def _query_pieces(scm, q: QueryPoint, k: int, sampler: LatentSampler):
    pi = scm.propensity(q.x, q.a)
    fmap = scm.outcome_map(q.x, q.a)
    u = sampler.normal(k, stream=("oracle-q0", q.query_id))
    f = fmap(u)
    return pi, fmap, float(np.mean(f)), f


def manski_bounds(scm, q: QueryPoint, k: int, sampler: LatentSampler):
    """No-assumptions bounds: propensity-weighted CAPO and worst-case arm."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pi, fmap, q0, _ = _query_pieces(scm, q, k, sampler)
    grid = np.linspace(-_MANSKI_RANGE, _MANSKI_RANGE, _MANSKI_GRID)
    vals = fmap(grid)
    sup = _refine_extremum(fmap, grid, vals, maximize=True)
    inf = _refine_extremum(fmap, grid, vals, maximize=False)
    return (pi * q0 + (1.0 - pi) * inf, pi * q0 + (1.0 - pi) * sup)


def _refine_extremum(fmap, grid, vals, maximize: bool) -> float:
    idx = int(np.argmax(vals) if maximize else np.argmin(vals))
    lo = grid[max(idx - 1, 0)]
    hi = grid[min(idx + 1, len(grid) - 1)]
    sign = -1.0 if maximize else 1.0
    res = minimize_scalar(lambda u: sign * float(fmap(u)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-10})
    best = sign * res.fun
    return max(best, vals[idx]) if maximize else min(best, vals[idx])


def msm_closed_form(scm, q: QueryPoint, gamma: float, k: int,
                    sampler: LatentSampler):
    """Sharp MSM bounds by the threshold (quantile-balancing) argument.

    The pointwise constraint Γ⁻¹ ≤ r ≤ Γ plus normalization forces the
    optimal ratio to saturate at Γ above an outcome threshold and Γ⁻¹
    below it, with the threshold at the τ-quantile of f_Y(x, U, a),
    U ~ φ: τ = Γ/(Γ+1) for the upper bound, 1/(Γ+1) for the lower one.
    Implemented as the exact linear-program solution on the empirical
    measure of k draws (the straddling atom is split fractionally).
    """
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1 for the MSM")
    if k < 2:
        raise ValueError("k must be >= 2")
    pi, fmap, q0, f = _query_pieces(scm, q, k, sampler)
    fs = np.sort(f)
    upper = pi * q0 + (1.0 - pi) * _threshold_value(fs, gamma, upper=True)
    lower = pi * q0 + (1.0 - pi) * _threshold_value(fs, gamma, upper=False)
    return (lower, upper)


def msm_bounds_from_draws(pi: float, q0: float, f_sorted: np.ndarray,
                          gamma: float):
    """Closed-form MSM bounds reusing a shared bank of outcome draws."""
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1 for the MSM")
    lo = pi * q0 + (1.0 - pi) * _threshold_value(f_sorted, gamma, upper=False)
    hi = pi * q0 + (1.0 - pi) * _threshold_value(f_sorted, gamma, upper=True)
    return (lo, hi)


def _threshold_value(fs: np.ndarray, gamma: float, upper: bool) -> float:
    """E_φ[r·f] for the saturating ratio on the empirical measure of fs."""
    k = fs.size
    if not upper:
        # mirror: the lower bound puts Γ on the low tail
        return -_threshold_value(-fs[::-1], gamma, upper=True)
    tau = gamma / (gamma + 1.0)  # mass below the threshold, ratio Γ⁻¹
    j = int(math.floor(tau * k))
    frac_below = tau - j / k                       # of the straddling atom
    csum = np.concatenate([[0.0], np.cumsum(fs)])
    below = csum[j] / k
    above = (csum[k] - csum[min(j + 1, k)]) / k
    mid = fs[j] if j < k else 0.0
    below += frac_below * mid
    above += (1.0 / k - frac_below) * mid if j < k else 0.0
    return (1.0 / gamma) * below + gamma * above


# ---------------------------------------------------------------------------
# Discretized brute-force convex program
# ---------------------------------------------------------------------------

_GRID_RANGE = 6.0  # matches the flow tail bound; ν has φ tails outside
_PROJ_TOL = 1e-6
_SOFTMAX_TEMP = 1e-5


@dataclass
class _GridProblem:
    u: np.ndarray
    w: np.ndarray       # φ-weights, normalized to sum 1
    f: np.ndarray
    q0: float


def _build_grid(fmap, grid_size: int) -> _GridProblem:
    u = np.linspace(-_GRID_RANGE, _GRID_RANGE, grid_size)
    w = np.exp(log_phi(u))
    w /= w.sum()
    f = fmap(u)
    return _GridProblem(u=u, w=w, f=f, q0=float(np.sum(w * f)))


def _project(v: np.ndarray, w: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection onto {lo ≤ r ≤ hi, Σ wᵢrᵢ = 1}.

    KKT gives r = clip(v − μw, lo, hi) with the normalization multiplier μ
    found by bisection (Σ w·r(μ) is monotone non-increasing in μ).
    """
    def total(mu):
        return float(np.sum(w * np.clip(v - mu * w, lo, hi)))

    lo_mu, hi_mu = -1.0, 1.0
    while total(lo_mu) < 1.0:
        lo_mu *= 2.0
        if lo_mu < -1e15:
            raise ArithmeticError("projection bracket failed")
    while total(hi_mu) > 1.0:
        hi_mu *= 2.0
        if hi_mu > 1e15:
            raise ArithmeticError("projection bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo_mu + hi_mu)
        if total(mid) > 1.0:
            lo_mu = mid
        else:
            hi_mu = mid
    mu = 0.5 * (lo_mu + hi_mu)
    return np.clip(v - mu * w, lo, hi)


def _solve_msm_lp(gp: _GridProblem, gamma: float, maximize: bool) -> float:
    """max/min Σ wᵢrᵢfᵢ over the box-and-normalization polytope."""
    c = gp.w * (gp.f if maximize else -gp.f)
    scale = float(np.max(np.abs(gp.f))) + 1.0
    step_cap = 1e9 / scale
    r = np.ones_like(gp.w)
    best = -np.inf
    step = 1.0
    for _ in range(60):
        r_new = _project(r + step * c, gp.w, 1.0 / gamma, gamma)
        val = float(np.sum(c * r_new))
        if val > best + 1e-16:
            best = val
            r = r_new
        step = min(step * 4.0, step_cap)
    value = float(np.sum(gp.w * r * gp.f))
    return value


def _kl_pair(r: np.ndarray, w: np.ndarray):
    rs = np.maximum(r, 1e-300)
    fwd = float(np.sum(w * rs * np.log(rs)))
    rev = float(np.sum(w * (-np.log(rs))))
    return fwd, rev


def _kkt_ratio(f: np.ndarray, w: np.ndarray, eta1: float, eta2: float):
    """Normalized stationary ratio of Σwrf − η₁KL_fwd − η₂KL_rev.

    Cell-wise stationarity f − η₁(log r + 1) + η₂/r = μ has the closed
    form log r = A + ω(log η₂ − log η₁ − A), A = (f − μ − η₁)/η₁, with ω
    the Wright omega function; the normalization multiplier μ solving
    Σ w·r(μ) = 1 is located by safeguarded Newton (Σ w·r is strictly
    decreasing in μ).
    """
    from scipy.special import wrightomega

    def log_r_and_slope(mu):
        if eta2 == 0.0:
            t = (f - mu) / eta1 - 1.0
            dt = np.full_like(f, -1.0 / eta1)
        elif eta1 == 0.0:
            gap = np.maximum(mu - f, 1e-300)
            t = math.log(eta2) - np.log(gap)
            dt = -1.0 / gap
        else:
            a = (f - mu - eta1) / eta1
            om = wrightomega(math.log(eta2) - math.log(eta1) - a).real
            t = a + om
            dt = -1.0 / (eta1 * (1.0 + om))
        return np.clip(t, -700.0, 700.0), dt

    def total(mu):
        t, _ = log_r_and_slope(mu)
        return float(np.sum(w * np.exp(t)))

    def total_slope(mu):
        t, dt = log_r_and_slope(mu)
        with np.errstate(over="ignore", invalid="ignore"):
            s = float(np.sum(w * np.exp(t) * dt))
        return s if np.isfinite(s) else -np.inf

    fmax = float(np.max(f))
    if eta1 == 0.0:
        lo, hi = fmax + 1e-300, fmax + 1.0
        while total(hi) > 1.0:
            hi = fmax + (hi - fmax) * 4.0
            if hi > 1e12:
                raise ArithmeticError("normalization bracket failed")
    else:
        lo, hi = fmax - 1.0, fmax + 1.0
        while total(lo) < 1.0:
            lo -= 2.0 * (hi - lo)
            if lo < -1e12:
                raise ArithmeticError("normalization bracket failed")
        while total(hi) > 1.0:
            hi += 2.0 * (hi - lo)
            if hi > 1e12:
                raise ArithmeticError("normalization bracket failed")
    mu = 0.5 * (lo + hi)
    for _ in range(100):
        tot = total(mu)
        if tot > 1.0:
            lo = mu
        else:
            hi = mu
        if abs(tot - 1.0) < 1e-13 or hi - lo < 1e-15 * max(1.0, abs(mu)):
            break
        slope = total_slope(mu)
        if np.isfinite(slope) and slope < 0:
            mu_newton = mu - (tot - 1.0) / slope
            mu = mu_newton if lo < mu_newton < hi else 0.5 * (lo + hi)
        else:
            mu = 0.5 * (lo + hi)
    t, _ = log_r_and_slope(mu)
    return np.exp(t)


def _kl_residual(f, w, gamma, log_etas):
    eta1, eta2 = math.exp(log_etas[0]), math.exp(log_etas[1])
    r = _kkt_ratio(f, w, eta1, eta2)
    fwd, rev = _kl_pair(r, w)
    return np.array([math.log(max(fwd, 1e-300) / gamma),
                     math.log(max(rev, 1e-300) / gamma)]), r


def _bisect_single_eta(f, w, gamma, forward: bool):
    """Bisection on one multiplier with the other at zero."""
    def kl_at(eta):
        r = _kkt_ratio(f, w, eta if forward else 0.0,
                       0.0 if forward else eta)
        fwd, rev = _kl_pair(r, w)
        return (fwd if forward else rev), r

    lo, hi = 1e-8, 1e8
    kl, r = kl_at(lo)
    if kl < gamma:          # constraint slack even almost unpenalized
        return lo, r, True
    for _ in range(80):
        eta = math.sqrt(lo * hi)
        kl, r = kl_at(eta)
        if kl > gamma:
            lo = eta
        else:
            hi = eta
        if abs(kl - gamma) <= 1e-10 * max(1.0, gamma):
            break
    return eta, r, False


def _solve_kl_bound(gp: _GridProblem, gamma: float, maximize: bool) -> float:
    """Value of the Γ-constrained program via its stationarity structure.

    Tries the single-constraint solutions first (forward-only exponential
    tilt, then reverse-only); when both KL directions bind, runs a damped
    Newton iteration on the two multipliers in log space.
    """
    if gamma <= 1e-12:
        return gp.q0
    f = gp.f if maximize else -gp.f
    w = gp.w

    eta1, r, slack = _bisect_single_eta(f, w, gamma, forward=True)
    if slack or _kl_pair(r, w)[1] <= gamma + _PROJ_TOL:
        return float(np.sum(w * r * gp.f))
    eta2, r, slack = _bisect_single_eta(f, w, gamma, forward=False)
    if slack or _kl_pair(r, w)[0] <= gamma + _PROJ_TOL:
        return float(np.sum(w * r * gp.f))

    x = np.log([max(eta1, 1e-7), max(eta2, 1e-7)])
    res, r = _kl_residual(f, w, gamma, x)
    stalled = False
    for _ in range(60):
        if np.max(np.abs(res)) < 1e-10:
            break
        # finite-difference Jacobian in log space
        jac = np.empty((2, 2))
        h = 1e-5
        for j in range(2):
            xp = x.copy()
            xp[j] += h
            res_p, _ = _kl_residual(f, w, gamma, xp)
            jac[:, j] = (res_p - res) / h
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            stalled = True
            break
        step = np.clip(step, -2.0, 2.0)
        scale = 1.0
        for _ in range(20):
            res_new, r_new = _kl_residual(f, w, gamma, x + scale * step)
            if np.max(np.abs(res_new)) < np.max(np.abs(res)):
                x = x + scale * step
                res, r = res_new, r_new
                break
            scale *= 0.5
        else:
            stalled = True
            break
    if stalled or np.max(np.abs(res)) > 1e-8:
        r = _solve_kl_both_active_bisect(f, w, gamma)
    return float(np.sum(w * r * gp.f))


def _solve_kl_both_active_bisect(f, w, gamma):
    """Nested-bisection fallback for the both-constraints-active case.

    For a mixing weight ρ, enforce ρ·KL_fwd + (1−ρ)·KL_rev = Γ by
    bisection on the common multiplier scale η (the mixture is monotone
    in η); then bisect ρ on KL_fwd − KL_rev, which is decreasing in ρ.
    At the root both divergences equal Γ.
    """
    def solve_at_rho(rho):
        lo, hi = 1e-8, 1e8
        r = None
        for _ in range(70):
            eta = math.sqrt(lo * hi)
            r = _kkt_ratio(f, w, eta * rho, eta * (1.0 - rho))
            fwd, rev = _kl_pair(r, w)
            mix = rho * fwd + (1.0 - rho) * rev
            if mix > gamma:
                lo = eta
            else:
                hi = eta
            if abs(mix - gamma) <= 1e-11 * max(1.0, gamma):
                break
        fwd, rev = _kl_pair(r, w)
        return r, fwd - rev

    rho_lo, rho_hi = 1e-6, 1.0 - 1e-6
    r, gap = solve_at_rho(0.5)
    lo_r, hi_r = rho_lo, rho_hi
    for _ in range(60):
        rho = 0.5 * (lo_r + hi_r)
        r, gap = solve_at_rho(rho)
        if gap > 0:
            lo_r = rho
        else:
            hi_r = rho
        if abs(gap) <= 1e-10:
            break
    return r


def brute_force_bound(scm, q: QueryPoint, spec: GtsmSpec, gamma: float,
                      grid_size: int = 2001, sampler: LatentSampler | None = None):
    """Bounds from the discretized latent program, any supported GTSM.

    Discretizes U on [-6, 6] with φ-weights and optimizes the ratio
    vector r ≥ 0 subject to Σ wᵢrᵢ = 1 and the divergence constraint by
    projected gradient (constraint multipliers located by bisection).
    """
    if grid_size < 101:
        raise ValueError("grid_size must be >= 101")
    if spec.kind not in (MSM, F_KL):
        raise ValueError("brute force supports MSM and F_KL only")
    if gamma < spec.floor:
        raise ValueError(f"gamma below the {spec.kind} floor {spec.floor}")
    pi = scm.propensity(q.x, q.a)
    fmap = scm.outcome_map(q.x, q.a)
    gp = _build_grid(fmap, grid_size)
    if spec.kind == MSM:
        hi = _solve_msm_lp(gp, gamma, maximize=True)
        lo = _solve_msm_lp(gp, gamma, maximize=False)
    else:
        hi = _solve_kl_bound(gp, gamma, maximize=True)
        lo = _solve_kl_bound(gp, gamma, maximize=False)
    return (pi * gp.q0 + (1.0 - pi) * lo, pi * gp.q0 + (1.0 - pi) * hi)
