"""Sampler health checks: temperature estimators and split-chain R-hat.

For momenta m with diagonal mass M sampled from their stationary law, the
kinetic temperature (1/d) m^T M^{-1} m estimates the target temperature.
The configurational temperature (1/d) w^T grad U(w) estimates the same
quantity through the positions. Both are reported per parameter tensor and
as an element-count weighted overall value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .tensor import ParamTree


@dataclass(frozen=True)
class TempEstimate:
    """Per-tensor estimates with an element-count weighted mean and SD."""

    groups: dict[str, float]
    counts: dict[str, int]
    overall: float
    overall_sd: float


def _aggregate(groups: dict[str, float], counts: dict[str, int]) -> TempEstimate:
    total = sum(counts.values())
    mean = sum(groups[k] * counts[k] for k in groups) / total
    var = sum(counts[k] * (groups[k] - mean) ** 2 for k in groups) / total
    return TempEstimate(groups, counts, mean, float(np.sqrt(var)))


def kinetic_temperature(momenta: ParamTree, mass: ParamTree) -> TempEstimate:
    """(1/d) sum m_i^2 / M_i per tensor and element-weighted overall."""
    groups = {k: float((m * m / mass[k]).mean()) for k, m in momenta.items()}
    counts = {k: int(m.size) for k, m in momenta.items()}
    return _aggregate(groups, counts)


def configurational_temperature(params: ParamTree, grad_u: ParamTree) -> TempEstimate:
    """(1/d) sum w_i * dU/dw_i per tensor and element-weighted overall.

    Unlike the kinetic estimator this can be negative pointwise; only its
    expectation matches the temperature.
    """
    groups = {k: float((w * grad_u[k]).mean()) for k, w in params.items()}
    counts = {k: int(w.size) for k, w in params.items()}
    return _aggregate(groups, counts)


def split_rhat(chains: np.ndarray) -> float:
    """Rank-normalised split R-hat of a scalar quantity across chains.

    ``chains`` is [n_chains, n_samples]. Each chain is split in half (an odd
    sample count drops the first draw), all values are rank-normalised
    jointly with average ranks for ties and the Blom transform
    z = Phi^{-1}((r - 3/8) / (S + 1/4)), and the classic potential scale
    reduction factor is computed on the z-scores over the 2 * n_chains
    half-chains.

    Requires at least 2 chains and 4 samples per chain. Returns NaN when the
    statistic is undefined: any non-finite input, or zero within-chain
    variance (all values identical).
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"chains must be 2-D [n_chains, n_samples], got shape {x.shape}")
    c, s = x.shape
    if c < 2:
        raise ValueError(f"split R-hat needs at least 2 chains, got {c}")
    if s < 4:
        raise ValueError(f"split R-hat needs at least 4 samples per chain, got {s}")
    if s % 2 == 1:
        x = x[:, 1:]
        s -= 1
    if not np.all(np.isfinite(x)):
        return float("nan")
    half = s // 2
    splits = np.concatenate([x[:, :half], x[:, half:]], axis=0)  # [2C, half]
    ranks = rankdata(splits.ravel(), method="average").reshape(splits.shape)
    z = ndtri((ranks - 0.375) / (splits.size + 0.25))
    w = z.var(axis=1, ddof=1).mean()
    if w <= 0.0 or not np.isfinite(w):
        return float("nan")
    b = half * z.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * w + b / half
    return float(math.sqrt(var_plus / w))
