"""Posterior potential U(w) = -log p(y | x, w) - log p(w).

U is always the untempered potential: temperature is applied inside the
samplers (it scales their injected noise), never here. Likelihood terms sum
over the full training set; ``minibatch_grad`` rescales a batch gradient by
N/B so it is an unbiased estimate of the full gradient of U.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models, priors, tensor
from .errors import NonFiniteError
from .models import ModelSpec, ParamInfo
from .priors import PriorSpec
from .tensor import ParamTree

DIVERGENCE_BOUND = 1e12  # |U| above this counts as a diverged chain


@dataclass
class Potential:
    """U's ingredients plus the target temperature.

    ``temperature`` is carried for bookkeeping (archives, reports); the
    samplers read the temperature they actually inject from their own
    config, keeping U itself untempered.
    """

    spec: ModelSpec
    prior: PriorSpec
    x: np.ndarray
    y: np.ndarray
    temperature: float = 1.0
    metadata: list[ParamInfo] = field(init=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"inputs ({self.x.shape[0]}) and targets ({self.y.shape[0]}) disagree")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        self.metadata = models.param_metadata(self.spec)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])


def potential(pot: Potential, params: ParamTree) -> float:
    """U(w) over the full training set. Raises NonFiniteError on NaN/inf."""
    nll = models.nll_np(pot.spec, params, pot.x, pot.y, reduce="sum")
    u = nll - priors.log_prob(pot.prior, params, pot.metadata)
    if not np.isfinite(u):
        raise NonFiniteError("potential", f"U = {u!r}")
    return float(u)


def log_prior(pot: Potential, params: ParamTree) -> float:
    return priors.log_prob(pot.prior, params, pot.metadata)


def grad_potential(pot: Potential, params: ParamTree) -> ParamTree:
    """Exact full-batch gradient of U."""
    if pot.n == 0:
        g = priors.grad_log_prob(pot.prior, params, pot.metadata)
        return {k: -v for k, v in g.items()}
    return minibatch_grad(pot, params, np.arange(pot.n))


def minibatch_grad(pot: Potential, params: ParamTree, batch_idx: np.ndarray) -> ParamTree:
    """Unbiased stochastic gradient of U from the rows in ``batch_idx``.

    Returns (N/B) * grad of the batch negative log likelihood plus the exact
    gradient of -log p(w).
    """
    idx = np.asarray(batch_idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("minibatch_grad needs a non-empty batch")
    xb = pot.x[idx]
    yb = pot.y[idx]
    scale = pot.n / idx.size

    def batch_nll(leaves):
        return models.loss(pot.spec, leaves, tensor.Tensor(xb), yb, reduce="sum")

    g_nll = tensor.grad(batch_nll, params)
    g_prior = priors.grad_log_prob(pot.prior, params, pot.metadata)
    return {k: scale * g_nll[k] - g_prior[k] for k in params}
