"""Tempered Bayesian neural networks with heavy-tailed and correlated
weight priors.

The package provides a small reverse-mode autodiff core with compiled
kernels (``tbnn._kernels``), FCNN/CNN models, weight priors (Gaussian,
Laplace, Student-t, spatially correlated Gaussian), tempered-posterior
potentials, SG-MCMC samplers (GGMC and SGLD with cyclical schedules and
preconditioning), convergence and temperature diagnostics, posterior
predictive metrics, weight-distribution analysis, dataset utilities, a
bit-exact checkpoint format and a command line front end.
"""

from ._kernels import BACKEND as kernel_backend
from .data import Dataset, load_idx, load_uci_csv, make_synthetic, rotate_images, subsample
from .diagnostics import configurational_temperature, kinetic_temperature, split_rhat
from .errors import ConfigError, DataError, DivergenceError, NonFiniteError
from .metrics import EvalReport, PredictiveEnsemble, ece, ensemble_predict, evaluate, ood_auroc
from .models import ModelSpec, forward, init_params, loss, nll, param_metadata
from .posterior import Potential, grad_potential, minibatch_grad, potential
from .priors import PriorSpec, build_matern_covariance, grad_log_prob, log_prob, sample
from .samplers import (
    SampleArchive,
    SamplerConfig,
    chain_seeds,
    cyclical_lr,
    derive_friction,
    ggmc_step,
    run_chain,
    sgd_map,
    sgld_step,
    splitmix64,
)
from .tensor import Tensor, finite_diff_grad, grad
from .weightstats import (
    MarginalFit,
    fit_kernel_lengthscale,
    fit_location_scale,
    fit_student_t,
    qq_data,
    spatial_covariance,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "DivergenceError", "EvalReport",
    "MarginalFit", "ModelSpec", "NonFiniteError", "Potential",
    "PredictiveEnsemble", "PriorSpec", "SampleArchive", "SamplerConfig",
    "Tensor", "build_matern_covariance", "chain_seeds",
    "configurational_temperature", "cyclical_lr", "derive_friction", "ece",
    "ensemble_predict", "evaluate", "finite_diff_grad",
    "fit_kernel_lengthscale", "fit_location_scale", "fit_student_t",
    "forward", "ggmc_step", "grad", "grad_log_prob", "grad_potential",
    "init_params", "kernel_backend", "kinetic_temperature", "load_idx",
    "load_uci_csv", "log_prob", "loss", "make_synthetic", "minibatch_grad",
    "nll", "ood_auroc", "param_metadata", "potential", "qq_data",
    "rotate_images", "run_chain", "sample", "sgd_map", "sgld_step",
    "spatial_covariance", "split_rhat", "splitmix64", "subsample",
    "__version__",
]
