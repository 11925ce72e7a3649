"""Lagrangian Pareto-frontier sweep over latent distribution shifts.

For one query (x, a) and bound direction, the engine maximizes

    J(ν) = ±[π·Q0 + (1−π)·E_ν f_Y(x, ·, a)] − λ·Δ(ν)

over spline-flow parameters by adaptive-moment gradient ascent, then
sweeps λ from large to small, warm-starting each solve at the previous
optimum (optimizer moments reset at every λ).  Each λ contributes one
(λ, Γ*, θ*) frontier point; the raw points are stored unmodified and a
monotone (isotonic) projection is applied only in the reporting and
interpolation layer.

Queries of one DGP are optimized as a stacked batch of independent flows
with a summed early-stopping criterion, so a sweep advances every query
per numpy call.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import flow as flow_mod
from .flow import (LatentSampler, SplineFlowParams, SplineSpec, compile_batch,
                   forward_batch, inverse_batch, accumulate_param_grads,
                   fixed_point_adjoints, concat_locals, log_phi)
from .gtsm import GtsmSpec, MSM, F_KL
from .prior import OutcomeMap, QueryPoint, StructuralCausalModel

LOWER = "lower"
UPPER = "upper"
_BOUND_SIGN = {LOWER: -1.0, UPPER: 1.0}
_MSM_SOFTMAX_TEMP = 0.01
_SUP_GRID_SIZE = 512


@dataclass(frozen=True)
class LambdaGrid:
    """Descending log-uniform multiplier grid."""

    lambda_max: float = 2.0
    lambda_min: float = 0.08
    n_points: int = 50
    spacing: str = "log-uniform"

    def __post_init__(self):
        if not (self.lambda_max > self.lambda_min > 0):
            raise ValueError("need lambda_max > lambda_min > 0")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.spacing != "log-uniform":
            raise ValueError("only log-uniform spacing is supported")

    @property
    def values(self) -> np.ndarray:
        return np.geomspace(self.lambda_max, self.lambda_min, self.n_points)


@dataclass(frozen=True)
class EarlyStopConfig:
    min_steps: int = 100
    check_every: int = 25
    patience: int = 3
    abs_tol: float = 2e-4
    rel_tol: float = 5e-4

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SweepConfig:
    base_max_steps: int = 350
    step_cap: float = 2.0
    lr_base: float = 1e-3
    lr_lambda_ref: float = 0.25
    lr_min_mult: float = 0.40
    early_stop: EarlyStopConfig | None = field(default_factory=EarlyStopConfig)
    k_train: int = 128
    k_eval: int = 4096
    warm_start: bool = True
    loss_reduction: str = "per_dgp_sum"
    flow_spec: SplineSpec = field(default_factory=SplineSpec)

    def __post_init__(self):
        if self.k_eval < self.k_train:
            raise ValueError("k_eval must be >= k_train")
        if self.loss_reduction != "per_dgp_sum":
            raise ValueError("only per_dgp_sum loss reduction is supported")

    def steps_for(self, lam: float, lam_max: float) -> int:
        mult = min(self.step_cap, math.sqrt(lam_max / lam))
        return int(round(self.base_max_steps * mult))

    def lr_for(self, lam: float) -> float:
        return self.lr_base * max(self.lr_min_mult, math.sqrt(lam / self.lr_lambda_ref))


@dataclass
class FrontierPoint:
    lam: float
    gamma_star: float
    theta_star: float
    bound_type: str
    steps_used: int
    gamma_se: float = 0.0
    theta_se: float = 0.0
    degraded: bool = False
    objective_train: float = math.nan

    @property
    def objective(self) -> float:
        """Scalarized objective value reconstructed from the stored point."""
        return _BOUND_SIGN[self.bound_type] * self.theta_star - self.lam * self.gamma_star


@dataclass
class FrontierCurve:
    points: list
    query_id: int
    bound_type: str
    q0: float
    q0_se: float = 0.0

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def gammas(self) -> np.ndarray:
        return np.array([p.gamma_star for p in self.points])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta_star for p in self.points])

    @property
    def degraded(self) -> bool:
        return any(p.degraded for p in self.points)


# ---------------------------------------------------------------------------
# Query workspaces
# ---------------------------------------------------------------------------

@dataclass
class QueryProblem:
    """Per-query constants of the scalarized objective."""

    query: QueryPoint
    pi: float
    q0: float
    q0_se: float
    fmap: OutcomeMap


def build_problem(scm: StructuralCausalModel, q: QueryPoint,
                  sampler: LatentSampler, k_q0: int = 16384) -> QueryProblem:
    pi = scm.propensity(q.x, q.a)
    fmap = scm.outcome_map(q.x, q.a)
    u = sampler.normal(k_q0, stream=("q0", q.query_id))
    f = fmap(u)
    q0 = float(np.mean(f))
    q0_se = float(np.std(f) / math.sqrt(k_q0))
    return QueryProblem(query=q, pi=pi, q0=q0, q0_se=q0_se, fmap=fmap)


class _BatchedOutcome:
    """Stacked OutcomeMaps evaluated on (m, k) latents."""

    def __init__(self, fmaps):
        self.g = np.array([f.g for f in fmaps])[:, None]
        self.s = np.array([f.s for f in fmaps])[:, None]
        self.beta = np.array([f.beta for f in fmaps])[:, None]
        self.c = np.array([f.c for f in fmaps])[:, None]
        self.loc = np.array([f.loc for f in fmaps])[:, None]
        self.scale = np.array([f.scale for f in fmaps])[:, None]

    def value(self, u):
        from .prior import _PSI_SCALE, _RESID_GAMMA

        v = u + (self.c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * u + self.beta)
        raw = self.g + self.s * _PSI_SCALE * np.tanh(v / _PSI_SCALE)
        return (raw - self.loc) / self.scale

    def deriv(self, u):
        from .prior import _PSI_SCALE, _RESID_GAMMA

        v = u + (self.c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * u + self.beta)
        dv = 1.0 + self.c / np.cosh(_RESID_GAMMA * u + self.beta) ** 2
        dpsi = 1.0 / np.cosh(v / _PSI_SCALE) ** 2
        return self.s * dpsi * dv / self.scale


# ---------------------------------------------------------------------------
# Batched objective evaluation
# ---------------------------------------------------------------------------

@dataclass
class _Workspace:
    """Shared constants of one batched sweep."""

    spec: GtsmSpec
    bound_sign: float
    pi: np.ndarray          # (m, 1)
    q0: np.ndarray          # (m,)
    q0_se: np.ndarray       # (m,)
    outcome: _BatchedOutcome
    z_train: np.ndarray     # (k,)
    z_eval: np.ndarray
    u_phi_train: np.ndarray  # fixed φ-bank for the reverse-KL quadrature
    u_phi_eval: np.ndarray   # φ-bank used in eval-time sup estimation
    sup_grid: np.ndarray
    flow_spec: SplineSpec


def _eval_objective(ws: _Workspace, theta: np.ndarray, lam: float,
                    want_grad: bool, force_numpy: bool = False):
    """Objective values (m,) and, optionally, gradients (m, P)."""
    m = theta.shape[0]
    k = ws.z_train.size
    knots = compile_batch(theta, ws.flow_spec)
    if ws.spec.kind == F_KL and _kernels.AVAILABLE and not force_numpy:
        return _kernels.kl_objective_grad(knots, ws, theta.shape, ws.z_train,
                                          ws.u_phi_train, lam, want_grad)
    z = np.broadcast_to(ws.z_train, (m, k))
    u, logdet, loc = forward_batch(knots, z, want_locals=True)
    logr = log_phi(z) - logdet - log_phi(u)
    f_vals = ws.outcome.value(u)
    q_nu = f_vals.mean(axis=1)
    query_term = ws.pi[:, 0] * ws.q0 + (1.0 - ws.pi[:, 0]) * q_nu

    fixed_bank = ws.u_phi_train if ws.spec.kind == F_KL else ws.sup_grid
    nfix = fixed_bank.size
    ufix = np.broadcast_to(fixed_bank, (m, nfix))
    if want_grad:
        zfix, locfix, d_u_fix_unit, d_ld_fix_unit, ld_fix = fixed_point_adjoints(
            knots, ufix, np.ones((m, nfix)))
        logdet_fix = ld_fix
    else:
        zfix, ld_inv = inverse_batch(knots, ufix)
        logdet_fix = -ld_inv
    logr_fix = log_phi(zfix) - logdet_fix - log_phi(ufix)

    if ws.spec.kind == F_KL:
        # forward KL from the ν-samples (pathwise); reverse KL as a fixed
        # φ-bank quadrature, which keeps its gradient informative when ν
        # concentrates and the importance weights would collapse
        fwd = logr.mean(axis=1)
        rev = -logr_fix.mean(axis=1)
        delta = np.maximum(fwd, rev)
        j = ws.bound_sign * query_term - lam * delta
        if not want_grad:
            return j, None
        # χ = −λ·∂Δ/∂ℓ per sample; branch-selected subgradient of the max
        use_fwd = (fwd >= rev)[:, None]
        chi_path = np.where(use_fwd, -lam / k, 0.0)
        chi_fix = np.where(use_fwd, 0.0, lam / nfix)
        d_u_path = (ws.bound_sign * (1.0 - ws.pi) / k) * ws.outcome.deriv(u) \
            + chi_path * u
        d_ld_path = np.broadcast_to(-chi_path, logr.shape)
        d_u_fix = chi_fix * d_u_fix_unit
        d_ld_fix = chi_fix * d_ld_fix_unit
    else:
        # MSM: smooth log-sum-exp surrogate of max(sup r, sup 1/r)
        pooled = np.concatenate([logr, logr_fix], axis=1)
        absr = np.abs(pooled)
        t = _MSM_SOFTMAX_TEMP
        mx = absr.max(axis=1, keepdims=True)
        wts = np.exp((absr - mx) / t)
        wsum = wts.sum(axis=1, keepdims=True)
        delta = np.exp(mx[:, 0] + t * np.log(wsum[:, 0]))
        j = ws.bound_sign * query_term - lam * delta
        if not want_grad:
            return j, None
        chi = (-lam * delta[:, None]) * (wts / wsum) * np.sign(pooled)
        chi_path, chi_fix = chi[:, :k], chi[:, k:]
        d_u_path = (ws.bound_sign * (1.0 - ws.pi) / k) * ws.outcome.deriv(u) \
            + chi_path * u
        d_ld_path = -chi_path
        d_u_fix = chi_fix * d_u_fix_unit
        d_ld_fix = chi_fix * d_ld_fix_unit

    loc_all = concat_locals(loc, locfix)
    d_u_all = np.concatenate([d_u_path, d_u_fix], axis=1)
    d_ld_all = np.concatenate([np.ascontiguousarray(d_ld_path), d_ld_fix], axis=1)
    grads = accumulate_param_grads(knots, loc_all, d_u_all, d_ld_all)
    return j, grads


def _eval_frontier_point(ws: _Workspace, theta: np.ndarray, lam: float,
                         bound_type: str, steps_used: int, degraded,
                         objective_train=None) -> list:
    """Final high-budget evaluation of every flow row at one λ."""
    m = theta.shape[0]
    k = ws.z_eval.size
    knots = compile_batch(theta, ws.flow_spec)
    z = np.broadcast_to(ws.z_eval, (m, k))
    u, logdet = forward_batch(knots, z)
    logr = log_phi(z) - logdet - log_phi(u)
    f_vals = ws.outcome.value(u)
    q_nu = f_vals.mean(axis=1)
    theta_star = ws.pi[:, 0] * ws.q0 + (1.0 - ws.pi[:, 0]) * q_nu
    theta_se = np.sqrt((1.0 - ws.pi[:, 0]) ** 2 * f_vals.var(axis=1) / k
                       + (ws.pi[:, 0] * ws.q0_se) ** 2)

    if ws.spec.kind == F_KL:
        # forward KL pathwise from the ν-samples; reverse KL from the fixed
        # φ-bank (the importance-reweighted estimator degenerates once ν
        # concentrates and would report phantom Γ* outliers)
        fwd = logr.mean(axis=1)
        logr_bank = (flow_mod.log_density_batch(
            knots, np.broadcast_to(ws.u_phi_eval, (m, ws.u_phi_eval.size)))
            - log_phi(ws.u_phi_eval))
        rev = (-logr_bank).mean(axis=1)
        gamma = np.maximum(fwd, rev)
        se_fwd = logr.std(axis=1) / math.sqrt(k)
        se_rev = logr_bank.std(axis=1) / math.sqrt(ws.u_phi_eval.size)
        gamma_se = np.where(fwd >= rev, se_fwd, se_rev)
    else:
        fixed = np.concatenate([ws.sup_grid, ws.u_phi_eval])
        logr_fix = (flow_mod.log_density_batch(knots, np.broadcast_to(
            fixed, (m, fixed.size))) - log_phi(fixed))
        pooled = np.concatenate([logr, logr_fix], axis=1)
        stat = np.abs(pooled) if ws.spec.kind == MSM else pooled
        if ws.spec.kind == MSM:
            gamma = np.exp(stat.max(axis=1))
        else:
            gamma = np.exp(pooled.max(axis=1) - pooled.min(axis=1))
        # block-extremum spread over the ν-samples as a rough scale of noise
        nblk = 8
        blocks = np.abs(logr[:, : (k // nblk) * nblk].reshape(m, nblk, -1))
        blk_max = np.exp(blocks.max(axis=2))
        gamma_se = blk_max.std(axis=1) / math.sqrt(nblk)

    gamma = np.maximum(gamma, ws.spec.floor)
    if objective_train is None:
        objective_train = np.full(m, math.nan)
    return [FrontierPoint(lam=float(lam), gamma_star=float(gamma[i]),
                          theta_star=float(theta_star[i]), bound_type=bound_type,
                          steps_used=steps_used, gamma_se=float(gamma_se[i]),
                          theta_se=float(theta_se[i]), degraded=bool(degraded[i]),
                          objective_train=float(objective_train[i]))
            for i in range(m)]


class _Adam:
    """Adaptive-moment ascent; moments reset at construction (one per λ)."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        theta += self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _optimize_lambda_batch(ws: _Workspace, theta: np.ndarray, lam: float,
                           max_steps: int, lr: float,
                           early_stop: EarlyStopConfig | None):
    """Ascent at fixed λ; mutates theta, returns (steps_used, degraded, total)."""
    m = theta.shape[0]
    adam = _Adam(theta.shape, lr)
    degraded = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    last_good = theta.copy()
    best_total = -np.inf
    patience = 0
    steps = 0
    for step in range(1, max_steps + 1):
        j, grads = _eval_objective(ws, theta, lam, want_grad=True)
        bad = ~(np.isfinite(j) & np.all(np.isfinite(grads), axis=1))
        if bad.any():
            theta[bad] = last_good[bad]
            degraded |= bad
            active &= ~bad
            grads[bad] = 0.0
            if not active.any():
                steps = step
                break
        good = ~bad
        last_good[good] = theta[good]
        grads[~active] = 0.0
        adam.step(theta, grads)
        steps = step
        if early_stop is not None and step >= early_stop.min_steps \
                and step % early_stop.check_every == 0:
            total = float(np.sum(j[np.isfinite(j)]))
            tol = max(early_stop.abs_tol, early_stop.rel_tol * abs(best_total))
            if total - best_total < tol and np.isfinite(best_total):
                patience += 1
            else:
                patience = 0
            best_total = max(best_total, total)
            if patience >= early_stop.patience:
                break
    j, _ = _eval_objective(ws, theta, lam, want_grad=False)
    return steps, degraded, j


def _build_workspace(scm, problems, spec, config: SweepConfig, bound_type: str,
                     sampler: LatentSampler) -> _Workspace:
    fs = config.flow_spec
    return _Workspace(
        spec=spec,
        bound_sign=_BOUND_SIGN[bound_type],
        pi=np.array([p.pi for p in problems])[:, None],
        q0=np.array([p.q0 for p in problems]),
        q0_se=np.array([p.q0_se for p in problems]),
        outcome=_BatchedOutcome([p.fmap for p in problems]),
        z_train=sampler.normal(config.k_train, stream="train"),
        z_eval=sampler.normal(config.k_eval, stream="eval"),
        u_phi_train=sampler.normal(config.k_train, stream="phi-train"),
        u_phi_eval=sampler.normal(config.k_eval, stream="phi"),
        sup_grid=np.linspace(-fs.tail_bound, fs.tail_bound, _SUP_GRID_SIZE),
        flow_spec=fs,
    )


def sweep_queries(scm: StructuralCausalModel, queries, spec: GtsmSpec,
                  grid: LambdaGrid, config: SweepConfig, sampler: LatentSampler,
                  bound_type: str, log_file=None, problems=None,
                  checkpoint_path=None) -> list:
    """Trace the frontier for a batch of queries of one DGP.

    Returns one FrontierCurve per query.  All queries share the optimizer
    step budget (per-DGP summed early stopping) and the Monte Carlo banks.
    When checkpoint_path is given, the flow vectors and accumulated points
    are saved after every λ and an interrupted sweep resumes there.
    """
    if bound_type not in _BOUND_SIGN:
        raise ValueError("bound_type must be 'lower' or 'upper'")
    if spec.kind not in (MSM, F_KL):
        raise ValueError("frontier sweeps support MSM and F_KL only")
    if problems is None:
        problems = [build_problem(scm, q, sampler) for q in queries]
    ws = _build_workspace(scm, problems, spec, config, bound_type, sampler)

    m = len(problems)
    identity = config.flow_spec.identity_vector()
    theta = np.tile(identity, (m, 1))
    lam_values = grid.values
    per_query_points = [[] for _ in range(m)]
    start_index = 0
    if checkpoint_path is not None:
        resumed = _load_checkpoint(checkpoint_path, lam_values, bound_type, m)
        if resumed is not None:
            theta, start_index, per_query_points = resumed
    for lam in lam_values[start_index:]:
        if not config.warm_start:
            theta[:] = identity
        steps_cap = config.steps_for(lam, grid.lambda_max)
        lr = config.lr_for(lam)
        steps, degraded, j_train = _optimize_lambda_batch(
            ws, theta, lam, steps_cap, lr, config.early_stop)
        points = _eval_frontier_point(ws, theta, lam, bound_type, steps, degraded,
                                      objective_train=j_train)
        for i, pt in enumerate(points):
            per_query_points[i].append(pt)
        if log_file is not None:
            log_file.write(json.dumps({
                "lambda": float(lam), "bound": bound_type, "steps": steps,
                "objective_total": float(np.nansum(j_train)),
                "n_degraded": int(degraded.sum()),
                "gamma_mean": float(np.mean([p.gamma_star for p in points])),
            }) + "\n")
            log_file.flush()
        if checkpoint_path is not None:
            _save_checkpoint(checkpoint_path, lam_values, bound_type, theta,
                             per_query_points)
    return [FrontierCurve(points=per_query_points[i],
                          query_id=problems[i].query.query_id,
                          bound_type=bound_type, q0=problems[i].q0,
                          q0_se=problems[i].q0_se)
            for i in range(m)]


_POINT_FIELDS = ("lam", "gamma_star", "theta_star", "steps_used", "gamma_se",
                 "theta_se", "degraded", "objective_train")


def _save_checkpoint(path, lam_values, bound_type, theta, per_query_points):
    done = len(per_query_points[0])
    arrays = {
        f: np.array([[getattr(p, f) for p in pts] for pts in per_query_points],
                    dtype=float)
        for f in _POINT_FIELDS
    }
    np.savez(path, lam_values=lam_values, bound_type=bound_type, theta=theta,
             done=done, **arrays)


def _load_checkpoint(path, lam_values, bound_type, m):
    import os

    if not os.path.exists(path):
        return None
    data = np.load(path, allow_pickle=False)
    if str(data["bound_type"]) != bound_type or data["theta"].shape[0] != m \
            or data["lam_values"].shape != lam_values.shape \
            or not np.allclose(data["lam_values"], lam_values):
        return None
    done = int(data["done"])
    points = []
    for i in range(m):
        pts = []
        for j in range(done):
            pts.append(FrontierPoint(
                lam=float(data["lam"][i, j]),
                gamma_star=float(data["gamma_star"][i, j]),
                theta_star=float(data["theta_star"][i, j]),
                bound_type=bound_type,
                steps_used=int(data["steps_used"][i, j]),
                gamma_se=float(data["gamma_se"][i, j]),
                theta_se=float(data["theta_se"][i, j]),
                degraded=bool(data["degraded"][i, j]),
                objective_train=float(data["objective_train"][i, j])))
        points.append(pts)
    return data["theta"].copy(), done, points


def sweep(scm: StructuralCausalModel, q: QueryPoint, spec: GtsmSpec,
          grid: LambdaGrid, config: SweepConfig, sampler: LatentSampler,
          bound_type: str, log_file=None) -> FrontierCurve:
    """Frontier sweep for a single query (batch of one)."""
    return sweep_queries(scm, [q], spec, grid, config, sampler, bound_type,
                         log_file=log_file)[0]


# ---------------------------------------------------------------------------
# Public single-evaluation operations
# ---------------------------------------------------------------------------

def scalarized_objective(params: SplineFlowParams, scm: StructuralCausalModel,
                         q: QueryPoint, lam: float, bound_type: str,
                         spec: GtsmSpec, k: int, sampler: LatentSampler) -> float:
    """±[π·Q0 + (1−π)·Ê_ν f_Y] − λ·Δ̂ at the given flow."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    problem = build_problem(scm, q, sampler)
    config = SweepConfig(k_train=k, k_eval=max(k, 2), flow_spec=params.spec)
    ws = _build_workspace(scm, [problem], spec, config, bound_type, sampler)
    j, _ = _eval_objective(ws, params.to_vector()[None, :], lam, want_grad=False)
    return float(j[0])


@dataclass
class OptimizeState:
    """Mutable state threaded through per-λ solves of one query."""

    scm: StructuralCausalModel
    query: QueryPoint
    spec: GtsmSpec
    bound_type: str
    sampler: LatentSampler
    config: SweepConfig
    lambda_max: float
    theta: np.ndarray = None
    problem: QueryProblem = None
    _workspace: _Workspace = None

    def __post_init__(self):
        if self.theta is None:
            self.theta = self.config.flow_spec.identity_vector()
        if self.problem is None:
            self.problem = build_problem(self.scm, self.query, self.sampler)
        if self._workspace is None:
            self._workspace = _build_workspace(
                self.scm, [self.problem], self.spec, self.config,
                self.bound_type, self.sampler)


def optimize_at_lambda(state: OptimizeState, lam: float,
                       config: SweepConfig | None = None):
    """One Lagrangian solve; warm-starts from state.theta, moments reset."""
    config = config or state.config
    theta = state.theta[None, :].copy()
    steps_cap = config.steps_for(lam, state.lambda_max)
    lr = config.lr_for(lam)
    steps, degraded, j_train = _optimize_lambda_batch(
        state._workspace, theta, lam, steps_cap, lr, config.early_stop)
    state.theta = theta[0]
    point = _eval_frontier_point(state._workspace, theta, lam, state.bound_type,
                                 steps, degraded, objective_train=j_train)[0]
    params = SplineFlowParams.from_vector(
        state.theta, n_bins=config.flow_spec.n_bins,
        tail_bound=config.flow_spec.tail_bound)
    return params, point


# ---------------------------------------------------------------------------
# Reporting layer: isotonic projection, interpolation, inversion, regret
# ---------------------------------------------------------------------------

def _pav(y: np.ndarray, increasing: bool) -> np.ndarray:
    """Pool-adjacent-violators with unit weights."""
    sign = 1.0 if increasing else -1.0
    vals = list(sign * y)
    weights = [1.0] * len(vals)
    blocks = []
    for v, w in zip(vals, weights):
        blocks.append([v, w])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, w2 = blocks.pop()
            v1, w1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2])
    out = []
    for v, w in blocks:
        out.extend([v] * int(w))
    return sign * np.array(out)


def isotonic_knots(curve: FrontierCurve):
    """(Γ, θ) knots after monotone projection, duplicates averaged."""
    order = np.argsort(curve.gammas, kind="stable")
    g = curve.gammas[order]
    th = curve.thetas[order]
    th = _pav(th, increasing=(curve.bound_type == UPPER))
    gu, inverse = np.unique(g, return_inverse=True)
    tu = np.zeros_like(gu)
    counts = np.zeros_like(gu)
    np.add.at(tu, inverse, th)
    np.add.at(counts, inverse, 1.0)
    return gu, tu / counts


def frontier_at_gamma(curve: FrontierCurve, gamma: float) -> float:
    """Monotone piecewise-linear interpolation of the bound at Γ."""
    g, th = isotonic_knots(curve)
    if not (g[0] <= gamma <= g[-1]):
        raise ValueError(
            f"gamma {gamma} outside the curve's range [{g[0]}, {g[-1]}]")
    return float(np.interp(gamma, g, th))


def invert_frontier(curve: FrontierCurve, theta_target: float) -> float:
    """Smallest Γ at which the bound reaches theta_target."""
    g, th = isotonic_knots(curve)
    upper = curve.bound_type == UPPER
    tight, wide = th[0], th[-1]
    tol = max(5.0 * curve.points[0].theta_se, 1e-9)
    reach = (theta_target <= wide) if upper else (theta_target >= wide)
    if not reach:
        raise ValueError(
            f"theta target {theta_target} is beyond the widest bound {wide} "
            f"on this curve (the no-assumptions Manski limit caps it)")
    inside = (theta_target >= tight) if upper else (theta_target <= tight)
    if not inside:
        if abs(theta_target - tight) <= tol:
            return float(g[0])
        raise ValueError(
            f"theta target {theta_target} is tighter than the point-identified "
            f"end {tight} of this curve")
    y = th if upper else -th
    t = theta_target if upper else -theta_target
    j = int(np.searchsorted(y, t, side="left"))
    if j == 0:
        return float(g[0])
    if y[j] == y[j - 1]:
        return float(g[j - 1])
    frac = (t - y[j - 1]) / (y[j] - y[j - 1])
    return float(g[j - 1] + frac * (g[j] - g[j - 1]))


def regret_vs_reference(curve: FrontierCurve,
                        reference: FrontierCurve) -> np.ndarray:
    """Reference objective minus achieved objective, per λ.

    When both curves carry the shared-bank training objective the regret
    compares that (the quantity the optimizers maximized, so the
    comparison is free of eval-bank quadrature bias); otherwise it falls
    back to the objective reconstructed from the evaluated (Γ*, θ*).
    """
    if curve.bound_type != reference.bound_type:
        raise ValueError("bound types differ")
    if len(curve.points) != len(reference.points) or not np.allclose(
            curve.lambdas, reference.lambdas, rtol=1e-12):
        raise ValueError("λ grids differ")
    shared = all(math.isfinite(p.objective_train) for p in curve.points) and \
        all(math.isfinite(p.objective_train) for p in reference.points)
    if shared:
        return np.array([rp.objective_train - cp.objective_train
                         for cp, rp in zip(curve.points, reference.points)])
    return np.array([rp.objective - cp.objective
                     for cp, rp in zip(curve.points, reference.points)])
