"""Synthetic confounded structural causal models.

Samples SCMs whose structural assignments are small random tanh networks,
draws observational datasets and query points from them, and exposes the
outcome map per (x, a) as a monotone-in-u function with an exact inverse.
The latent confounder's conditional law is standard normal for every
(x, a), so the counterfactual-arm reference density is the base normal by
construction and the point-identified query is a plain Monte Carlo mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import derive_rng

# fixed shape constants of the outcome construction; see OutcomeMap
_PSI_SCALE = 2.0      # saturation level of the monotone output nonlinearity
_RESID_GAMMA = 1.5    # inner residual frequency
_RESID_CAP = 0.9      # |inner residual slope| bound, keeps du-monotonicity
_SCALE_FLOOR = 0.1    # lower bound on the outcome u-scale head


class OutcomeDomainError(ValueError):
    """Raised when inverting an outcome value outside the map's image."""


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the SCM prior."""

    d_x: int = 10
    n_obs: int = 1024
    hidden_widths: tuple = (32, 32)
    activation: str = "tanh"
    weight_scale: float = 1.0
    propensity_clip: tuple = (0.02, 0.98)
    noise_scale_range: tuple = (0.5, 1.5)
    normalize_eps: float = 1e-6
    pilot_size: int = 4096

    def __post_init__(self):
        lo, hi = self.propensity_clip
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("propensity_clip must satisfy 0 < lo < hi < 1")
        if self.normalize_eps <= 0:
            raise ValueError("normalize_eps must be positive")
        if self.weight_scale <= 0:
            raise ValueError("weight_scale must be positive")
        if self.d_x < 1 or self.n_obs < 1 or self.pilot_size < 2:
            raise ValueError("d_x, n_obs, pilot_size must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be >= 1")
        nlo, nhi = self.noise_scale_range
        if not (0.0 < nlo <= nhi):
            raise ValueError("noise_scale_range must be positive and ordered")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")


def _init_mlp(rng, sizes, weight_scale):
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, weight_scale / np.sqrt(fan_in), size=(fan_in, fan_out))
        b = rng.normal(0.0, 0.1 * weight_scale, size=fan_out)
        layers.append((w, b))
    return layers


def _mlp_forward(layers, x):
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


def _outcome_pieces(f_y_params, head_gains, x, a):
    """Raw outcome heads (g, s, beta, c) for a batch of (x, a) rows."""
    a_arr = np.broadcast_to(np.asarray(a, dtype=float), (x.shape[0],))
    feats = np.concatenate([x, 2.0 * a_arr[:, None] - 1.0], axis=1)
    heads = _mlp_forward(f_y_params, feats) * head_gains
    g = heads[:, 0]
    s = np.logaddexp(0.0, heads[:, 1]) + _SCALE_FLOOR
    beta = heads[:, 2]
    c = _RESID_CAP * np.tanh(heads[:, 3])
    return g, s, beta, c


def _raw_outcome(g, s, beta, c, u):
    v = u + (c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * u + beta)
    return g + s * _PSI_SCALE * np.tanh(v / _PSI_SCALE)


@dataclass
class OutcomeMap:
    """The outcome assignment restricted to one (x, a) pair.

    y = (g + s·Ψ(v(u)) − loc)/scale with Ψ(t) = 2·tanh(t/2) and
    v(u) = u + (c/γ)·tanh(γu + β), |c| < 1.  dv/du ≥ 1 − |c| > 0 and
    Ψ' > 0, so the map is strictly increasing with image
    ((g − 2s − loc)/scale, (g + 2s + loc)/scale) and an exact inverse.
    """

    g: float
    s: float
    beta: float
    c: float
    loc: float
    scale: float

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        v = u + (self.c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * u + self.beta)
        raw = self.g + self.s * _PSI_SCALE * np.tanh(v / _PSI_SCALE)
        return (raw - self.loc) / self.scale

    def deriv(self, u):
        """dy/du, analytically positive everywhere."""
        u = np.asarray(u, dtype=float)
        v = u + (self.c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * u + self.beta)
        dv = 1.0 + self.c / np.cosh(_RESID_GAMMA * u + self.beta) ** 2
        dpsi = 1.0 / np.cosh(v / _PSI_SCALE) ** 2
        return self.s * dpsi * dv / self.scale

    @property
    def image(self):
        lo = (self.g - self.s * _PSI_SCALE - self.loc) / self.scale
        hi = (self.g + self.s * _PSI_SCALE - self.loc) / self.scale
        return lo, hi

    def inverse(self, y):
        """u with outcome(u) = y; raises OutcomeDomainError outside the image."""
        y = np.asarray(y, dtype=float)
        raw = y * self.scale + self.loc
        t = (raw - self.g) / (self.s * _PSI_SCALE)
        if np.any(np.abs(t) >= 1.0):
            raise OutcomeDomainError(
                f"outcome value outside the image {self.image} of this (x, a) map")
        v = _PSI_SCALE * np.arctanh(t)
        # solve u + (c/γ)tanh(γu + β) = v; bracketed bisection + Newton polish
        half = abs(self.c) / _RESID_GAMMA + 1e-9
        lo = v - half
        hi = v + half
        lo, hi = np.broadcast_arrays(lo, hi)
        lo, hi = lo.copy(), hi.copy()
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            f = mid + (self.c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * mid + self.beta) - v
            hi = np.where(f > 0, mid, hi)
            lo = np.where(f > 0, lo, mid)
        u = 0.5 * (lo + hi)
        for _ in range(2):
            f = u + (self.c / _RESID_GAMMA) * np.tanh(_RESID_GAMMA * u + self.beta) - v
            fp = 1.0 + self.c / np.cosh(_RESID_GAMMA * u + self.beta) ** 2
            u = u - f / fp
        return u if y.ndim else float(u)


@dataclass
class StructuralCausalModel:
    """One sampled data-generating process."""

    seed: int
    config: PriorConfig
    f_x_params: list
    f_a_params: list
    f_y_params: list
    noise_scales: np.ndarray
    logit_gain: float = 1.0
    head_gains: np.ndarray = None
    y_shift_scale: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.head_gains is None:
            self.head_gains = np.ones(4)

    # -- covariates ---------------------------------------------------------
    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((n, self.config.d_x)) * self.noise_scales
        return _mlp_forward(self.f_x_params, eps)

    # -- treatment ----------------------------------------------------------
    def propensity(self, x, a) -> np.ndarray:
        """P(A = a | x), clipped into the positivity window."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        single = x.ndim == 1
        xb = x[None, :] if single else x
        logit = self.logit_gain * _mlp_forward(self.f_a_params, xb)[:, 0]
        lo, hi = self.config.propensity_clip
        p1 = lo + (hi - lo) / (1.0 + np.exp(-logit))
        p = np.where(np.asarray(a) == 1, p1, 1.0 - p1)
        return float(p[0]) if single else p

    # -- outcome ------------------------------------------------------------
    def outcome_map(self, x, a) -> OutcomeMap:
        """The monotone u → y map at one (x, a)."""
        x = np.asarray(x, dtype=float)
        g, s, beta, c = _outcome_pieces(self.f_y_params, self.head_gains,
                                        x[None, :], float(a))
        loc, scale = self.y_shift_scale
        return OutcomeMap(g=float(g[0]), s=float(s[0]), beta=float(beta[0]),
                          c=float(c[0]), loc=float(loc), scale=float(scale))

    def outcome(self, x, u, a):
        """y = f_Y(x, u, a), strictly increasing in u."""
        if not np.all(np.isfinite(u)):
            raise ValueError("u must be finite")
        return self.outcome_map(x, a)(u)

    def outcome_inverse(self, x, y, a):
        """u with f_Y(x, u, a) = y; domain error outside the image."""
        return self.outcome_map(x, a).inverse(y)


@dataclass
class Dataset:
    """Observational draws (x, a, y) from one SCM."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    scm_seed: int

    def __len__(self):
        return self.x.shape[0]

    @property
    def rows(self):
        return [(self.x[i], int(self.a[i]), float(self.y[i])) for i in range(len(self))]


@dataclass(frozen=True)
class QueryPoint:
    query_id: int
    x: np.ndarray
    a: int


def sample_scm(config: PriorConfig, seed: int) -> StructuralCausalModel:
    """Draw one SCM from the prior; identical (config, seed) is bit-identical."""
    rng = derive_rng(seed, "scm")
    d = config.d_x
    hw = list(config.hidden_widths)
    f_x = _init_mlp(rng, [d] + hw + [d], config.weight_scale)
    f_a = _init_mlp(rng, [d] + hw + [1], config.weight_scale)
    f_y = _init_mlp(rng, [d + 1] + hw + [4], config.weight_scale)
    nlo, nhi = config.noise_scale_range
    noise_scales = rng.uniform(nlo, nhi, size=d)
    # per-SCM gains diversify confounding strength and outcome shape
    logit_gain = rng.uniform(0.5, 4.0)
    head_gains = np.array([rng.uniform(0.5, 2.5), rng.uniform(0.5, 3.0),
                           rng.uniform(1.0, 6.0), rng.uniform(0.5, 3.0)])
    scm = StructuralCausalModel(seed=seed, config=config, f_x_params=f_x,
                                f_a_params=f_a, f_y_params=f_y,
                                noise_scales=noise_scales, logit_gain=logit_gain,
                                head_gains=head_gains)
    # normalize the outcome from a pilot sample so emitted y is ~N(0, 1)
    pilot_rng = derive_rng(seed, "scm", "pilot")
    xs = scm.sample_x(config.pilot_size, pilot_rng)
    p1 = scm.propensity(xs, 1)
    a = (pilot_rng.random(config.pilot_size) < p1).astype(int)
    u = pilot_rng.standard_normal(config.pilot_size)
    g, s, beta, c = _outcome_pieces(f_y, head_gains, xs, a)
    y_raw = _raw_outcome(g, s, beta, c, u)
    loc = float(np.mean(y_raw))
    scale = float(max(np.std(y_raw), config.normalize_eps))
    scm.y_shift_scale = (loc, scale)
    return scm


def sample_dataset(scm: StructuralCausalModel, n: int, seed: int) -> Dataset:
    """n i.i.d. observational rows; the latent and noises are discarded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed, "dataset", scm.seed)
    x = scm.sample_x(n, rng)
    p1 = scm.propensity(x, 1)
    a = (rng.random(n) < p1).astype(int)
    u = rng.standard_normal(n)
    g, s, beta, c = _outcome_pieces(scm.f_y_params, scm.head_gains, x, a)
    y_raw = _raw_outcome(g, s, beta, c, u)
    loc, scale = scm.y_shift_scale
    y = (y_raw - loc) / scale
    return Dataset(x=x, a=a, y=y, scm_seed=scm.seed)


def propensity(scm: StructuralCausalModel, x, a):
    return scm.propensity(x, a)


def outcome(scm: StructuralCausalModel, x, u, a):
    return scm.outcome(x, u, a)


def outcome_inverse(scm: StructuralCausalModel, x, y, a):
    return scm.outcome_inverse(x, y, a)


def point_identified_capo(scm, q: QueryPoint, k: int, seed: int) -> float:
    """Monte Carlo estimate of Q0 = E_{U~φ}[f_Y(x, U, a)]."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = derive_rng(seed, "capo", q.query_id)
    u = rng.standard_normal(k)
    return float(np.mean(scm.outcome(q.x, u, q.a)))


def sample_queries(scm: StructuralCausalModel, dataset: Dataset, m: int,
                   seed: int) -> list:
    """m covariate rows from the dataset, each expanded to both arms.

    Rows are drawn without replacement when m <= len(dataset); larger m
    recycles rows with replacement.  Ids are unique within the DGP.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = derive_rng(seed, "queries", scm.seed)
    n = len(dataset)
    if m <= n:
        idx = rng.choice(n, size=m, replace=False)
    else:
        idx = np.concatenate([rng.permutation(n), rng.choice(n, size=m - n, replace=True)])
    queries = []
    for j, i in enumerate(idx):
        x = dataset.x[i].copy()
        queries.append(QueryPoint(query_id=2 * j, x=x, a=0))
        queries.append(QueryPoint(query_id=2 * j + 1, x=x, a=1))
    return queries
