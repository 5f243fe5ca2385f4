"""Weight priors: isotropic families plus a spatially correlated Gaussian.

Scale convention: every family is parameterised through a per-tensor target
variance so that swapping families keeps the marginal weight variance fixed.
With ``scale_mode='he'`` the target variance is ``scale_multiplier * 2 /
fan_in``; with ``'fixed'`` it is ``scale_multiplier`` itself. Biases always
get unit target variance. Concretely:

* gaussian: sigma^2 = target variance
* laplace: 2 b^2 = target variance
* student_t: scale^2 * nu / (nu - 2) = target variance (nu > 2; for
  nu <= 2 the variance is undefined and scale^2 = target variance is used)
* uniform: improper, log density 0 everywhere, cannot be sampled
* correlated_gaussian: convolution filters get a multivariate normal over
  the kernel's spatial grid with exponential covariance
  ``sigma^2 exp(-d/lengthscale)`` (unit marginal variance when sigma=1);
  non-filter weights fall back to an isotropic Gaussian with variance
  sigma^2, biases to unit variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .models import ModelSpec, ParamInfo, param_metadata
from .tensor import ParamTree

FAMILIES = ("gaussian", "laplace", "student_t", "uniform", "correlated_gaussian")

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PriorSpec:
    family: str = "gaussian"
    scale_mode: str = "he"  # 'he' or 'fixed'
    scale_multiplier: float = 1.0
    nu: float = 3.0
    kernel_sigma: float = 1.0
    kernel_lengthscale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.scale_mode not in ("he", "fixed"):
            raise ValueError(f"scale_mode must be 'he' or 'fixed', got {self.scale_mode!r}")
        if self.scale_multiplier <= 0:
            raise ValueError("scale_multiplier must be positive")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.kernel_sigma <= 0 or self.kernel_lengthscale <= 0:
            raise ValueError("kernel_sigma and kernel_lengthscale must be positive")


@dataclass(frozen=True)
class FilterCovariance:
    """Dense covariance over a kh x kw spatial grid, with its Cholesky factor."""

    sigma: float
    lengthscale: float
    kh: int
    kw: int
    cov: np.ndarray
    chol: np.ndarray
    logdet: float


def grid_distances(kh: int, kw: int) -> np.ndarray:
    """Euclidean distances between kernel grid positions, row-major order."""
    rr, cc = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


@lru_cache(maxsize=64)
def build_matern_covariance(kh: int, kw: int, sigma: float = 1.0,
                            lengthscale: float = 1.0) -> FilterCovariance:
    """Exponential-kernel covariance sigma^2 exp(-d/lengthscale) on the grid."""
    if kh < 1 or kw < 1 or sigma <= 0 or lengthscale <= 0:
        raise ValueError("need kh, kw >= 1 and sigma, lengthscale > 0")
    d = grid_distances(kh, kw)
    cov = sigma ** 2 * np.exp(-d / lengthscale)
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return FilterCovariance(sigma, lengthscale, kh, kw, cov, chol, logdet)


def _target_var(prior: PriorSpec, info: ParamInfo) -> float:
    if info.role == "bias":
        return 1.0
    if prior.scale_mode == "he":
        return prior.scale_multiplier * 2.0 / info.fan_in
    return prior.scale_multiplier


def _student_scale(var: float, nu: float) -> float:
    if nu > 2.0:
        return float(np.sqrt(var * (nu - 2.0) / nu))
    return float(np.sqrt(var))


def _gaussian_logp(w: np.ndarray, var: float) -> float:
    return float(-0.5 * (w.size * (_LOG_2PI + np.log(var)) + (w ** 2).sum() / var))


def _filter_cov(prior: PriorSpec, info: ParamInfo) -> FilterCovariance:
    return build_matern_covariance(info.kernel_hw[0], info.kernel_hw[1],
                                   prior.kernel_sigma, prior.kernel_lengthscale)


def _metadata(spec) -> list[ParamInfo]:
    if isinstance(spec, ModelSpec):
        return param_metadata(spec)
    return list(spec)


def log_prob(prior: PriorSpec, params: ParamTree, spec) -> float:
    """Total log prior density over every tensor in the tree.

    ``spec`` is the ModelSpec (or an explicit ParamInfo list) giving each
    tensor's role and fan-in, which determine the per-tensor scales.
    """
    total = 0.0
    for info in _metadata(spec):
        w = params[info.name]
        if prior.family == "uniform":
            continue
        if prior.family == "correlated_gaussian":
            if info.conv_filter:
                fc = _filter_cov(prior, info)
                k = fc.cov.shape[0]
                v = w.reshape(-1, k)
                z = solve_triangular(fc.chol, v.T, lower=True)
                total += -0.5 * (v.shape[0] * (k * _LOG_2PI + fc.logdet) + float((z ** 2).sum()))
            else:
                var = prior.kernel_sigma ** 2 if info.role == "weight" else 1.0
                total += _gaussian_logp(w, var)
            continue
        var = _target_var(prior, info)
        if prior.family == "gaussian":
            total += _gaussian_logp(w, var)
        elif prior.family == "laplace":
            b = np.sqrt(var / 2.0)
            total += float(-(np.abs(w).sum() / b) - w.size * np.log(2.0 * b))
        else:  # student_t
            nu = prior.nu
            s = _student_scale(var, nu)
            const = (gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0)
                     - 0.5 * np.log(nu * np.pi) - np.log(s))
            total += float(w.size * const
                           - (nu + 1.0) / 2.0 * np.log1p((w / s) ** 2 / nu).sum())
    return total


def grad_log_prob(prior: PriorSpec, params: ParamTree, spec) -> ParamTree:
    """d log p(w) / dw, tensor by tensor. Laplace uses subgradient 0 at zero."""
    out: ParamTree = {}
    for info in _metadata(spec):
        w = params[info.name]
        if prior.family == "uniform":
            out[info.name] = np.zeros_like(w)
            continue
        if prior.family == "correlated_gaussian":
            if info.conv_filter:
                fc = _filter_cov(prior, info)
                k = fc.cov.shape[0]
                v = w.reshape(-1, k)
                z = solve_triangular(fc.chol, v.T, lower=True)
                siv = solve_triangular(fc.chol.T, z, lower=False)  # Sigma^{-1} v
                out[info.name] = (-siv.T).reshape(w.shape)
            else:
                var = prior.kernel_sigma ** 2 if info.role == "weight" else 1.0
                out[info.name] = -w / var
            continue
        var = _target_var(prior, info)
        if prior.family == "gaussian":
            out[info.name] = -w / var
        elif prior.family == "laplace":
            b = np.sqrt(var / 2.0)
            out[info.name] = -np.sign(w) / b
        else:
            nu = prior.nu
            s = _student_scale(var, nu)
            out[info.name] = -(nu + 1.0) * w / (nu * s ** 2 + w ** 2)
    return out


def sample(prior: PriorSpec, spec, seed: int = 0) -> ParamTree:
    """One joint draw from the prior. Raises for the improper uniform family."""
    if prior.family == "uniform":
        raise ValueError("the improper uniform prior cannot be sampled")
    rng = np.random.default_rng(seed)
    out: ParamTree = {}
    for info in _metadata(spec):
        if prior.family == "correlated_gaussian":
            if info.conv_filter:
                fc = _filter_cov(prior, info)
                k = fc.cov.shape[0]
                z = rng.standard_normal((int(np.prod(info.shape)) // k, k))
                out[info.name] = (z @ fc.chol.T).reshape(info.shape)
            else:
                var = prior.kernel_sigma ** 2 if info.role == "weight" else 1.0
                out[info.name] = rng.normal(0.0, np.sqrt(var), size=info.shape)
            continue
        var = _target_var(prior, info)
        if prior.family == "gaussian":
            out[info.name] = rng.normal(0.0, np.sqrt(var), size=info.shape)
        elif prior.family == "laplace":
            b = np.sqrt(var / 2.0)
            out[info.name] = rng.laplace(0.0, b, size=info.shape)
        else:
            nu = prior.nu
            s = _student_scale(var, nu)
            out[info.name] = s * rng.standard_t(nu, size=info.shape)
    return out
