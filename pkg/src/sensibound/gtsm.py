"""Treatment-sensitivity divergence functionals.

All three sensitivity models are expressed through the single latent
density ratio r(u) = ν(u)/φ(u), where ν is the flow-parameterized
counterfactual-arm latent density and φ the standard normal reference:

  MSM        max(sup r, sup 1/r)
  F_KL       max(KL(ν‖φ), KL(φ‖ν)) = max(E_φ[r log r], E_φ[−log r])
  Rosenbaum  sup r / inf r

Monte Carlo estimation shares one ν-sample budget: the forward KL uses
φ-samples directly, the reverse KL is importance-reweighted from the
ν-samples, and the sup/inf functionals take empirical extrema over the
union of ν-samples, φ-samples, and a fixed uniform grid (ratios can peak
off-sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as flow_mod
from .flow import LatentSampler, SplineFlowParams, log_phi

MSM = "msm"
F_KL = "f_kl"
ROSENBAUM = "rosenbaum"
_KINDS = (MSM, F_KL, ROSENBAUM)

_FLOORS = {MSM: 1.0, F_KL: 0.0, ROSENBAUM: 1.0}
# pseudo-count floor on ratios, keeps logs and importance weights finite
_LOG_RATIO_CLIP = -np.log(1e-12)
_SUP_GRID_SIZE = 512


class DivergenceNumericsError(ArithmeticError):
    """Non-finite density ratio encountered during divergence estimation."""


@dataclass(frozen=True)
class GtsmSpec:
    """Which sensitivity model constrains the latent shift."""

    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")

    @property
    def floor(self) -> float:
        return _FLOORS[self.kind]


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    n_samples: int
    estimator: str

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DivergenceNumericsError("divergence estimate is not finite")


def density_ratio(params: SplineFlowParams, u):
    """r(u) = ν(u)/φ(u); equals 1 outside the spline range."""
    return np.exp(log_ratio(params, u))


def log_ratio(params: SplineFlowParams, u):
    return flow_mod.log_density(params, u) - log_phi(np.asarray(u, dtype=float))


def _checked(logr: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(logr)):
        bad = np.asarray(logr)[~np.isfinite(np.asarray(logr))]
        raise DivergenceNumericsError(
            f"non-finite log density ratio in {where}: {bad[:5]}")
    return np.clip(logr, -_LOG_RATIO_CLIP, _LOG_RATIO_CLIP)


def _pathwise_log_ratio(params: SplineFlowParams, z: np.ndarray):
    """(u, log r(u)) at u = T(z) without an inverse pass."""
    u, logdet = flow_mod.transform(params, z)
    return u, log_phi(z) - logdet - log_phi(u)


def forward_kl_mc(params: SplineFlowParams, u_phi: np.ndarray) -> float:
    """Ê_φ[r log r] over fixed φ-samples."""
    logr = _checked(log_ratio(params, u_phi), "forward KL")
    return float(np.mean(np.exp(logr) * logr))


def reverse_kl_snis(log_r_nu: np.ndarray) -> float:
    """KL(φ‖ν) = E_φ[−log r] by self-normalized reweighting of ν-samples."""
    logr = _checked(log_r_nu, "reverse KL")
    w = np.exp(-logr - np.max(-logr))
    return float(np.sum(w * (-logr)) / np.sum(w))


def divergence_mc(spec: GtsmSpec, params: SplineFlowParams, k: int,
                  sampler: LatentSampler) -> DivergenceEstimate:
    """Monte Carlo divergence estimate at budget k."""
    if k < 2:
        raise ValueError("k must be >= 2")
    z = sampler.normal(k, stream=0)
    u_nu, logr_nu = _pathwise_log_ratio(params, z)
    logr_nu = _checked(logr_nu, "nu samples")

    if spec.kind == F_KL:
        u_phi = sampler.normal(k, stream=1)
        value = max(forward_kl_mc(params, u_phi), reverse_kl_snis(logr_nu))
    else:
        u_phi = sampler.normal(k, stream=1)
        grid = np.linspace(-params.tail_bound, params.tail_bound, _SUP_GRID_SIZE)
        logr_fixed = _checked(log_ratio(params, np.concatenate([u_phi, grid])),
                              "sup/inf points")
        pooled = np.concatenate([logr_nu, logr_fixed])
        if spec.kind == MSM:
            value = float(np.exp(max(pooled.max(), -pooled.min())))
        else:
            value = float(np.exp(pooled.max() - pooled.min()))
    return DivergenceEstimate(value=max(value, spec.floor), n_samples=k,
                              estimator="mc")


def divergence_quadrature(spec: GtsmSpec, params: SplineFlowParams,
                          grid: int) -> DivergenceEstimate:
    """Trapezoid-quadrature reference for the same functionals."""
    if grid < 101:
        raise ValueError("grid must be >= 101")
    b = params.tail_bound
    u = np.linspace(-b - 4.0, b + 4.0, grid)
    logr = _checked(log_ratio(params, u), "quadrature")
    if spec.kind == F_KL:
        phi = np.exp(log_phi(u))
        nu = phi * np.exp(logr)
        fwd = float(np.trapezoid(nu * logr, u))
        rev = float(np.trapezoid(phi * (-logr), u))
        value = max(fwd, rev)
    elif spec.kind == MSM:
        value = float(np.exp(max(logr.max(), -logr.min())))
    else:
        value = float(np.exp(logr.max() - logr.min()))
    return DivergenceEstimate(value=max(value, spec.floor), n_samples=grid,
                              estimator="quadrature")


def f_kl_on_grid(u: np.ndarray, nu_vals: np.ndarray) -> float:
    """max(KL(ν‖φ), KL(φ‖ν)) for a density given by values on a grid.

    Used by property tests that mix densities pointwise, where mixing flow
    parameters would be meaningless.
    """
    u = np.asarray(u, dtype=float)
    nu = np.maximum(np.asarray(nu_vals, dtype=float), 1e-300)
    phi = np.exp(log_phi(u))
    logr = np.log(nu) - log_phi(u)
    fwd = float(np.trapezoid(nu * logr, u))
    rev = float(np.trapezoid(phi * (-logr), u))
    return max(fwd, rev)
