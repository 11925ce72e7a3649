"""One-dimensional rational-quadratic spline flow.

The flow pushes the standard normal forward through a monotone
rational-quadratic spline on [-B, B] (identity outside), giving an exact
density, exact inverse, and hand-derived analytic gradients of any scalar
built from ``transform`` / ``log_density`` with respect to the
unconstrained parameters.  Internally everything is batched: a stack of
independent flows is a parameter matrix, and all kernels operate on
(n_flows, n_points) arrays so a per-query optimizer advances many flows
per numpy call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .seeds import derive_key

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def log_phi(u: np.ndarray) -> np.ndarray:
    """Standard normal log-density."""
    return -0.5 * np.square(u) - _LOG_SQRT_2PI


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    # inverse of log(1 + e^x); y > 0
    return y + np.log(-np.expm1(-y))


def _softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class SplineSpec:
    """Hyper-structure of a spline flow (shared across a batch)."""

    n_bins: int = 16
    tail_bound: float = 6.0
    min_bin_width: float = 1e-3
    min_bin_height: float = 1e-3
    min_derivative: float = 1e-3

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.tail_bound <= 0:
            raise ValueError("tail_bound must be positive")
        for name in ("min_bin_width", "min_bin_height", "min_derivative"):
            v = getattr(self, name)
            if not 0 < v < 1.0 / self.n_bins:
                raise ValueError(f"{name} must lie in (0, 1/n_bins)")

    @property
    def n_params(self) -> int:
        # widths (K) + heights (K) + knot derivatives (K+1)
        return 3 * self.n_bins + 1

    def identity_vector(self) -> np.ndarray:
        """Unconstrained parameters whose constrained transform is the identity."""
        k = self.n_bins
        vec = np.zeros(self.n_params)
        vec[2 * k :] = _softplus_inv(1.0 - self.min_derivative)
        return vec


@dataclass
class SplineFlowParams:
    """Parameters of one flow: unconstrained widths, heights, derivatives.

    The constrained map sends softmaxed-with-floor widths/heights onto bins
    summing to 2B, and softplus-with-floor derivatives; the two boundary
    knot derivatives are pinned to 1 so the transform (and the density
    ratio against the base normal) is continuous across u = ±B.
    """

    n_bins: int = 16
    tail_bound: float = 6.0
    widths: np.ndarray = None
    heights: np.ndarray = None
    derivatives: np.ndarray = None
    min_bin_width: float = 1e-3
    min_bin_height: float = 1e-3
    min_derivative: float = 1e-3

    def __post_init__(self):
        k = self.n_bins
        if self.widths is None:
            self.widths = np.zeros(k)
        if self.heights is None:
            self.heights = np.zeros(k)
        if self.derivatives is None:
            self.derivatives = np.full(k + 1, _softplus_inv(1.0 - self.min_derivative))
        self.widths = np.asarray(self.widths, dtype=float)
        self.heights = np.asarray(self.heights, dtype=float)
        self.derivatives = np.asarray(self.derivatives, dtype=float)
        if self.widths.shape != (k,) or self.heights.shape != (k,):
            raise ValueError("widths/heights must have n_bins entries")
        if self.derivatives.shape != (k + 1,):
            raise ValueError("derivatives must have n_bins+1 entries")
        self.spec  # validate hyperparameters

    @property
    def spec(self) -> SplineSpec:
        return SplineSpec(
            n_bins=self.n_bins,
            tail_bound=self.tail_bound,
            min_bin_width=self.min_bin_width,
            min_bin_height=self.min_bin_height,
            min_derivative=self.min_derivative,
        )

    @classmethod
    def identity(cls, n_bins: int = 16, tail_bound: float = 6.0, **kw) -> "SplineFlowParams":
        p = cls(n_bins=n_bins, tail_bound=tail_bound, **kw)
        return p

    @classmethod
    def random(cls, rng: np.random.Generator, n_bins: int = 16, tail_bound: float = 6.0,
               scale: float = 0.8, **kw) -> "SplineFlowParams":
        """Random perturbation around the identity, for tests and probes."""
        base = cls(n_bins=n_bins, tail_bound=tail_bound, **kw)
        vec = base.to_vector() + scale * rng.standard_normal(base.spec.n_params)
        return cls.from_vector(vec, n_bins=n_bins, tail_bound=tail_bound, **kw)

    def to_vector(self) -> np.ndarray:
        """Flat parameter vector, ordered (widths, heights, derivatives)."""
        return np.concatenate([self.widths, self.heights, self.derivatives])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_bins: int = 16, tail_bound: float = 6.0,
                    **kw) -> "SplineFlowParams":
        vec = np.asarray(vec, dtype=float)
        k = n_bins
        if vec.shape != (3 * k + 1,):
            raise ValueError(f"expected vector of length {3 * k + 1}, got {vec.shape}")
        return cls(n_bins=k, tail_bound=tail_bound,
                   widths=vec[:k].copy(), heights=vec[k:2 * k].copy(),
                   derivatives=vec[2 * k:].copy(), **kw)


@dataclass(frozen=True)
class LatentSampler:
    """Deterministic base-uniform source feeding the flow.

    kind="sobol" gives a scrambled one-dimensional Sobol stream (seeded,
    deterministic); kind="pseudo" a PCG64 stream.  ``stream`` selects an
    independent substream from the same seed.
    """

    kind: str = "sobol"
    seed: int = 123

    def __post_init__(self):
        if self.kind not in ("sobol", "pseudo"):
            raise ValueError("kind must be 'sobol' or 'pseudo'")

    def uniform(self, k: int, stream=0) -> np.ndarray:
        if k < 1:
            raise ValueError("k must be >= 1")
        key = derive_key(self.seed, "latent", stream)
        if self.kind == "sobol":
            from scipy.stats import qmc

            m = max(1, int(math.ceil(math.log2(k))))
            pts = qmc.Sobol(d=1, scramble=True, seed=key).random_base2(m).ravel()[:k]
        else:
            pts = np.random.default_rng(key).random(k)
        return np.clip(pts, 1e-12, 1.0 - 1e-12)

    def normal(self, k: int, stream=0) -> np.ndarray:
        return ndtri(self.uniform(k, stream=stream))


# ---------------------------------------------------------------------------
# Batched constrained representation and kernels
# ---------------------------------------------------------------------------

@dataclass
class _Knots:
    """Constrained spline quantities for a batch of flows."""

    spec: SplineSpec
    xk: np.ndarray    # (B, K+1) knot positions
    yk: np.ndarray    # (B, K+1)
    d: np.ndarray     # (B, K+1) knot derivatives, d[:,0] = d[:,-1] = 1
    w: np.ndarray     # (B, K) bin widths
    h: np.ndarray     # (B, K)
    pw: np.ndarray    # (B, K) softmax probabilities (width chain)
    ph: np.ndarray    # (B, K)
    sig: np.ndarray   # (B, K+1) sigmoid(theta_d), derivative chain

    @property
    def n_flows(self) -> int:
        return self.xk.shape[0]


def compile_batch(theta: np.ndarray, spec: SplineSpec) -> _Knots:
    """Map unconstrained parameter rows to knot quantities."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    k = spec.n_bins
    if theta.shape[1] != spec.n_params:
        raise ValueError("parameter row length mismatch")
    b2 = 2.0 * spec.tail_bound

    pw = _softmax(theta[:, :k])
    ph = _softmax(theta[:, k:2 * k])
    w = b2 * (spec.min_bin_width + (1.0 - k * spec.min_bin_width) * pw)
    h = b2 * (spec.min_bin_height + (1.0 - k * spec.min_bin_height) * ph)

    nb = theta.shape[0]
    xk = np.empty((nb, k + 1))
    yk = np.empty((nb, k + 1))
    xk[:, 0] = -spec.tail_bound
    yk[:, 0] = -spec.tail_bound
    np.cumsum(w, axis=1, out=xk[:, 1:])
    np.cumsum(h, axis=1, out=yk[:, 1:])
    xk[:, 1:] -= spec.tail_bound
    yk[:, 1:] -= spec.tail_bound
    xk[:, -1] = spec.tail_bound
    yk[:, -1] = spec.tail_bound

    thd = theta[:, 2 * k:]
    d = np.empty((nb, k + 1))
    d[:, 1:-1] = spec.min_derivative + _softplus(thd[:, 1:-1])
    d[:, 0] = 1.0
    d[:, -1] = 1.0
    sig = np.zeros_like(thd)
    sig[:, 1:-1] = 1.0 / (1.0 + np.exp(-thd[:, 1:-1]))
    return _Knots(spec=spec, xk=xk, yk=yk, d=d, w=w, h=h, pw=pw, ph=ph, sig=sig)


def _bins_for(points: np.ndarray, knot_grid: np.ndarray, k: int) -> np.ndarray:
    # row-wise bin index; knot rows are sorted so a broadcast comparison works
    idx = np.sum(points[:, :, None] >= knot_grid[:, None, :], axis=2) - 1
    return np.clip(idx, 0, k - 1)


@dataclass
class _Locals:
    """Per-point bin quantities shared by the transform and gradient kernels."""

    inside: np.ndarray
    bins: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    h: np.ndarray
    s: np.ndarray
    dk: np.ndarray
    dk1: np.ndarray
    nn: np.ndarray
    dd: np.ndarray
    mm: np.ndarray
    _partials: tuple = field(default=None, repr=False)

    def partials(self):
        if self._partials is None:
            self._partials = _local_partials(self)
        return self._partials


def _gathered(knots: _Knots, bins: np.ndarray):
    rows = np.arange(bins.shape[0])[:, None]
    w = knots.w[rows, bins]
    h = knots.h[rows, bins]
    xk = knots.xk[rows, bins]
    yk = knots.yk[rows, bins]
    dk = knots.d[rows, bins]
    dk1 = knots.d[rows, bins + 1]
    return w, h, xk, yk, dk, dk1


def _finish_locals(inside, bins, xi, w, h, dk, dk1):
    s = h / w
    p = xi * (1.0 - xi)
    xi2 = xi * xi
    a = dk + dk1 - 2.0 * s
    dd = s + a * p
    nn = h * (s * xi2 + dk * p)
    mm = dk1 * xi2 + 2.0 * s * p + dk * (1.0 - xi) * (1.0 - xi)
    logdet = np.where(inside, 2.0 * np.log(s) + np.log(mm) - 2.0 * np.log(dd), 0.0)
    loc = _Locals(inside=inside, bins=bins, xi=xi, w=w, h=h, s=s,
                  dk=dk, dk1=dk1, nn=nn, dd=dd, mm=mm)
    return loc, logdet


def forward_batch(knots: _Knots, z: np.ndarray, want_locals: bool = False):
    """Spline transform of (B, n) points; returns (u, log_abs_det[, locals])."""
    spec = knots.spec
    z = np.asarray(z, dtype=float)
    inside = np.abs(z) <= spec.tail_bound
    zi = np.where(inside, z, 0.0)
    bins = _bins_for(zi, knots.xk, spec.n_bins)
    w, h, xk, yk, dk, dk1 = _gathered(knots, bins)
    xi = np.clip((zi - xk) / w, 0.0, 1.0)
    loc, logdet = _finish_locals(inside, bins, xi, w, h, dk, dk1)
    u = np.where(inside, yk + loc.nn / loc.dd, z)
    if not want_locals:
        return u, logdet
    return u, logdet, loc


def inverse_batch(knots: _Knots, u: np.ndarray, want_locals: bool = False):
    """Exact spline inverse of (B, n) points.

    Returns (z, log_abs_det of the inverse[, forward-sense locals at z]).
    """
    spec = knots.spec
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= spec.tail_bound
    ui = np.where(inside, u, 0.0)
    bins = _bins_for(ui, knots.yk, spec.n_bins)
    w, h, xk, yk, dk, dk1 = _gathered(knots, bins)

    s = h / w
    yr = np.clip(ui - yk, 0.0, h)
    aa = dk + dk1 - 2.0 * s
    qa = h * (s - dk) + yr * aa
    qb = h * dk - yr * aa
    qc = -s * yr
    disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    xi = np.clip(2.0 * qc / (-qb - np.sqrt(disc)), 0.0, 1.0)

    loc, logdet_fwd = _finish_locals(inside, bins, xi, w, h, dk, dk1)
    z = np.where(inside, xk + xi * w, u)
    if not want_locals:
        return z, -logdet_fwd
    return z, -logdet_fwd, loc


def log_density_batch(knots: _Knots, u: np.ndarray) -> np.ndarray:
    z, logdet_inv = inverse_batch(knots, u)
    return log_phi(z) + logdet_inv


def concat_locals(a: _Locals, b: _Locals) -> _Locals:
    """Join two point sets so one gradient accumulation covers both."""
    cat = lambda x, y: np.concatenate([x, y], axis=1)
    return _Locals(inside=cat(a.inside, b.inside), bins=cat(a.bins, b.bins),
                   xi=cat(a.xi, b.xi), w=cat(a.w, b.w), h=cat(a.h, b.h),
                   s=cat(a.s, b.s), dk=cat(a.dk, b.dk), dk1=cat(a.dk1, b.dk1),
                   nn=cat(a.nn, b.nn), dd=cat(a.dd, b.dd), mm=cat(a.mm, b.mm))


def _local_partials(loc: _Locals):
    """Partials of (u, log|det|) w.r.t. the six local bin quantities.

    Returns per-point arrays (u_x, u_w, u_h, u_dk, u_dk1, L_x, L_w, L_h,
    L_dk, L_dk1); the y-knot partial of u is identically 1 and of L is 0.
    """
    xi, w, h, s = loc.xi, loc.w, loc.h, loc.s
    dk, dk1, nn, dd, mm = loc.dk, loc.dk1, loc.nn, loc.dd, loc.mm
    p = xi * (1.0 - xi)
    om = 1.0 - xi
    one_m_2xi = 1.0 - 2.0 * xi
    a = dk + dk1 - 2.0 * s
    inv_d = 1.0 / dd
    inv_m = 1.0 / mm
    inv_d2 = inv_d * inv_d

    d_xi = a * one_m_2xi
    n_xi = h * (2.0 * s * xi + dk * one_m_2xi)
    m_xi = 2.0 * (dk1 * xi + s * one_m_2xi - dk * om)

    d_s = 1.0 - 2.0 * p
    n_s = h * np.square(xi)
    m_s = 2.0 * p

    u_xi = (n_xi * dd - nn * d_xi) * inv_d2
    u_s = (n_s * dd - nn * d_s) * inv_d2
    u_dk = p * (h * dd - nn) * inv_d2
    u_dk1 = -nn * p * inv_d2
    u_h_direct = (nn / h) * inv_d

    l_xi = m_xi * inv_m - 2.0 * d_xi * inv_d
    l_s = 2.0 / s + m_s * inv_m - 2.0 * d_s * inv_d
    l_dk = np.square(om) * inv_m - 2.0 * p * inv_d
    l_dk1 = np.square(xi) * inv_m - 2.0 * p * inv_d

    inv_w = 1.0 / w
    u_x = -u_xi * inv_w
    l_x = -l_xi * inv_w
    u_w = -u_xi * xi * inv_w - u_s * s * inv_w
    l_w = -l_xi * xi * inv_w - l_s * s * inv_w
    u_h = u_h_direct + u_s * inv_w
    l_h = l_s * inv_w
    return u_x, u_w, u_h, u_dk, u_dk1, l_x, l_w, l_h, l_dk, l_dk1, l_xi


def _dlogdet_dz(loc: _Locals) -> np.ndarray:
    """∂ log|T'| / ∂z at the forward points (needed by the fixed-point path)."""
    l_xi = loc.partials()[-1]
    return l_xi / loc.w


def accumulate_param_grads(knots: _Knots, loc: _Locals,
                           d_u: np.ndarray, d_logdet: np.ndarray) -> np.ndarray:
    """Chain per-point adjoints on (u, log|det|) back to unconstrained rows.

    d_u, d_logdet: (B, n) weights of a scalar objective on the forward
    outputs at the cached points.  Returns (B, n_params) gradients.
    """
    spec = knots.spec
    k = spec.n_bins
    nb = knots.n_flows
    u_x, u_w, u_h, u_dk, u_dk1, l_x, l_w, l_h, l_dk, l_dk1, _ = loc.partials()

    mask = loc.inside
    alpha = np.where(mask, d_u, 0.0)
    beta = np.where(mask, d_logdet, 0.0)

    c_x = alpha * u_x + beta * l_x          # via left knot position -> widths j < bin
    c_w = alpha * u_w + beta * l_w          # direct width
    c_y = alpha                              # via y-knot -> heights j < bin
    c_h = alpha * u_h + beta * l_h
    c_dk = alpha * u_dk + beta * l_dk
    c_dk1 = alpha * u_dk1 + beta * l_dk1

    rows = np.broadcast_to(np.arange(nb)[:, None], loc.bins.shape)
    flat = (rows * k + loc.bins).ravel()

    def binned(c):
        return np.bincount(flat, weights=c.ravel(), minlength=nb * k).reshape(nb, k)

    def prefix_grad(c_prefix, c_direct):
        per_bin = binned(c_prefix)
        # width j accumulates every point in a bin strictly to its right
        tail = np.cumsum(per_bin[:, ::-1], axis=1)[:, ::-1]
        shifted = np.zeros_like(tail)
        shifted[:, :-1] = tail[:, 1:]
        return shifted + binned(c_direct)

    gw = prefix_grad(c_x, c_w)
    gh = prefix_grad(c_y, c_h)

    flat_d = (rows * (k + 1) + loc.bins).ravel()
    flat_d1 = (rows * (k + 1) + loc.bins + 1).ravel()
    gd = (np.bincount(flat_d, weights=c_dk.ravel(), minlength=nb * (k + 1))
          + np.bincount(flat_d1, weights=c_dk1.ravel(), minlength=nb * (k + 1))
          ).reshape(nb, k + 1)

    # chain through softmax-with-floor (widths, heights) and softplus (derivatives)
    b2 = 2.0 * spec.tail_bound
    cw = b2 * (1.0 - k * spec.min_bin_width)
    ch = b2 * (1.0 - k * spec.min_bin_height)
    g_thw = cw * knots.pw * (gw - np.sum(gw * knots.pw, axis=1, keepdims=True))
    g_thh = ch * knots.ph * (gh - np.sum(gh * knots.ph, axis=1, keepdims=True))
    g_thd = gd * knots.sig  # boundary columns have sig = 0 (pinned derivatives)
    return np.concatenate([g_thw, g_thh, g_thd], axis=1)


def fixed_point_adjoints(knots: _Knots, u_fixed: np.ndarray, d_logq: np.ndarray):
    """Convert adjoints on log ν(u) at fixed u into forward-path adjoints.

    With z = T⁻¹(u), d log ν(u)/dθ = (z + ∂_z log T'(z))/T'(z) · ∂_θ T(z)
    − ∂_θ log T'(z); points outside [-B, B] contribute nothing.  Also
    returns the forward log|T'| at z (log ν(u) = log φ(z) − log T'(z)).
    """
    z, logdet_inv, loc = inverse_batch(knots, u_fixed, want_locals=True)
    logdet = -logdet_inv
    tprime = np.exp(logdet)
    l_z = _dlogdet_dz(loc)
    d_u = np.where(loc.inside, d_logq * (z + l_z) / tprime, 0.0)
    d_logdet = np.where(loc.inside, -d_logq, 0.0)
    return z, loc, d_u, d_logdet, logdet


# ---------------------------------------------------------------------------
# Single-flow public operations
# ---------------------------------------------------------------------------

def _as_batch(params: SplineFlowParams, pts):
    knots = compile_batch(params.to_vector()[None, :], params.spec)
    arr = np.atleast_1d(np.asarray(pts, dtype=float))
    return knots, arr[None, :], np.isscalar(pts) or np.ndim(pts) == 0


def transform(params: SplineFlowParams, z):
    """Forward transform; returns (u, log_abs_det) matching the input shape."""
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    knots, zb, scalar = _as_batch(params, z)
    u, ld = forward_batch(knots, zb)
    return (float(u[0, 0]), float(ld[0, 0])) if scalar else (u[0], ld[0])


def inverse(params: SplineFlowParams, u):
    """Inverse transform; log-dets negate the forward ones."""
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    knots, ub, scalar = _as_batch(params, u)
    z, ld = inverse_batch(knots, ub)
    return (float(z[0, 0]), float(ld[0, 0])) if scalar else (z[0], ld[0])


def log_density(params: SplineFlowParams, u):
    """log ν(u) = log φ(T⁻¹(u)) + log |(T⁻¹)'(u)|."""
    if not np.all(np.isfinite(u)):
        raise ValueError("u must be finite")
    knots, ub, scalar = _as_batch(params, u)
    ld = log_density_batch(knots, ub)
    return float(ld[0, 0]) if scalar else ld[0]


def sample(params: SplineFlowParams, k: int, sampler: LatentSampler,
           stream=0) -> np.ndarray:
    """k pushforward draws u = T(Φ⁻¹(s)) from the sampler's base stream."""
    if k < 1:
        raise ValueError("k must be >= 1")
    z = sampler.normal(k, stream=stream)
    knots = compile_batch(params.to_vector()[None, :], params.spec)
    u, _ = forward_batch(knots, z[None, :])
    return u[0]


@dataclass
class FlowAdjoint:
    """Adjoint weights of a scalar objective on flow outputs.

    z / d_u / d_logdet weight the forward outputs (u_i, log|T'|(z_i)) at
    base points z_i; u_fixed / d_logq weight log ν at fixed evaluation
    points (density path).  Any of the two groups may be empty.
    """

    z: np.ndarray = field(default_factory=lambda: np.empty(0))
    d_u: np.ndarray = field(default_factory=lambda: np.empty(0))
    d_logdet: np.ndarray = field(default_factory=lambda: np.empty(0))
    u_fixed: np.ndarray = field(default_factory=lambda: np.empty(0))
    d_logq: np.ndarray = field(default_factory=lambda: np.empty(0))


def parameter_gradients(params: SplineFlowParams, adjoint: FlowAdjoint) -> np.ndarray:
    """Analytic gradient of the adjoint-weighted objective w.r.t. the flat vector."""
    for arr in (adjoint.d_u, adjoint.d_logdet, adjoint.d_logq):
        if not np.all(np.isfinite(arr)):
            raise ValueError("adjoint weights must be finite")
    knots = compile_batch(params.to_vector()[None, :], params.spec)
    grad = np.zeros((1, params.spec.n_params))
    if adjoint.z.size:
        z = np.atleast_1d(adjoint.z)[None, :]
        _, _, loc = forward_batch(knots, z, want_locals=True)
        grad += accumulate_param_grads(
            knots, loc,
            np.atleast_1d(adjoint.d_u)[None, :],
            np.atleast_1d(adjoint.d_logdet)[None, :])
    if adjoint.u_fixed.size:
        uf = np.atleast_1d(adjoint.u_fixed)[None, :]
        dlq = np.atleast_1d(adjoint.d_logq)[None, :]
        _, loc, d_u, d_logdet, _ = fixed_point_adjoints(knots, uf, dlq)
        grad += accumulate_param_grads(knots, loc, d_u, d_logdet)
    return grad[0]
