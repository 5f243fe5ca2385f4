"""Predictive evaluation of posterior ensembles.

Ensembling averages in probability space: each retained draw's softmax
output is computed separately and the probabilities are averaged, then all
metrics are taken on the averaged predictive distribution. This is the
posterior-predictive mixture, not a logit average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax
from scipy.stats import rankdata

from . import models
from .models import ModelSpec
from .tensor import ParamTree

PROB_FLOOR = 1e-12  # clamp before log so empty support cannot yield -inf


@dataclass(frozen=True)
class PredictiveEnsemble:
    """Mean class probabilities [n_test, classes] over posterior draws."""

    probs: np.ndarray
    n_draws: int

    def __post_init__(self) -> None:
        rows = self.probs.sum(axis=1)
        if not np.all(np.abs(rows - 1.0) < 1e-8):
            raise ValueError("ensemble rows must sum to 1")


def _draw_list(source) -> list[ParamTree]:
    """Accept a SampleArchive or a plain list of parameter trees."""
    draws = source.retained_params() if hasattr(source, "retained_params") else list(source)
    if not draws:
        raise ValueError("need at least one retained parameter draw")
    return draws


def ensemble_probs(draws: list[ParamTree], spec: ModelSpec, x: np.ndarray,
                   batch: int = 512) -> np.ndarray:
    """Mean softmax probabilities over draws, shape [n, classes]."""
    if not draws:
        raise ValueError("need at least one parameter draw")
    if spec.task != "classification":
        raise ValueError("ensemble_probs needs a classification model")
    n = x.shape[0]
    acc = np.zeros((n, spec.out_dim))
    for params in draws:
        for lo in range(0, n, batch):
            logits = models.forward_np(spec, params, x[lo:lo + batch])
            acc[lo:lo + batch] += softmax(logits, axis=-1)
    return acc / len(draws)


def ensemble_predict(archive, spec: ModelSpec, x: np.ndarray,
                     batch: int = 512) -> PredictiveEnsemble:
    """Posterior-predictive mean probabilities from a sample archive."""
    draws = _draw_list(archive)
    return PredictiveEnsemble(ensemble_probs(draws, spec, x, batch=batch), len(draws))


def ensemble_regression(draws, spec: ModelSpec, x: np.ndarray,
                        batch: int = 512) -> np.ndarray:
    """Mean regression output over draws, shape [n, out_dim]."""
    draws = _draw_list(draws)
    n = x.shape[0]
    acc = np.zeros((n, spec.out_dim))
    for params in draws:
        for lo in range(0, n, batch):
            acc[lo:lo + batch] += models.forward_np(spec, params, x[lo:lo + batch])
    return acc / len(draws)


def _probs(ens) -> np.ndarray:
    return ens.probs if isinstance(ens, PredictiveEnsemble) else np.asarray(ens)


def confidence_scores(ens) -> np.ndarray:
    """Max predictive probability per test point, the OOD score."""
    return _probs(ens).max(axis=1)


def test_error(ens, targets: np.ndarray) -> float:
    """Top-1 error rate. Ties resolve to the lowest class index."""
    pred = np.argmax(_probs(ens), axis=1)
    return float(np.mean(pred != np.asarray(targets)))


def test_nll(ens, targets: np.ndarray) -> float:
    """Mean negative log predictive probability of the true class."""
    probs = _probs(ens)
    y = np.asarray(targets, dtype=np.int64)
    p = probs[np.arange(len(y)), y]
    return float(-np.log(np.clip(p, PROB_FLOOR, None)).mean())


def mse(preds: np.ndarray, targets: np.ndarray) -> float:
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    return float(((preds - y) ** 2).mean())


def ece(ens, targets: np.ndarray, n_bins: int = 15) -> float:
    """Expected calibration error with equal-width confidence bins on (0, 1].

    Bin b covers (b/n_bins, (b+1)/n_bins]; empty bins contribute zero.
    """
    if n_bins < 1:
        raise ValueError("need at least one bin")
    probs = _probs(ens)
    y = np.asarray(targets, dtype=np.int64)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == y).astype(np.float64)
    # ceil maps conf in (b/n, (b+1)/n] to bin b; conf == 0 cannot occur
    idx = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    nonzero = counts > 0
    gaps = np.zeros(n_bins)
    gaps[nonzero] = np.abs(acc_sum[nonzero] / counts[nonzero]
                           - conf_sum[nonzero] / counts[nonzero])
    return float((counts * gaps).sum() / len(y))


def ood_auroc(in_scores: np.ndarray, out_scores: np.ndarray) -> float:
    """AUROC for separating in- from out-of-distribution scores.

    Scores are per-point confidences (max predictive probability); the
    in-distribution set is the positive class and is expected to score
    higher. Computed as the Mann-Whitney U statistic with average ranks, so
    tied scores count one half.
    """
    s_in = np.asarray(in_scores, dtype=np.float64).ravel()
    s_out = np.asarray(out_scores, dtype=np.float64).ravel()
    n_in, n_out = len(s_in), len(s_out)
    if n_in == 0 or n_out == 0:
        raise ValueError("both score sets must be non-empty")
    ranks = rankdata(np.concatenate([s_in, s_out]), method="average")
    r_in = ranks[:n_in].sum()
    return float((r_in - n_in * (n_in + 1) / 2.0) / (n_in * n_out))


@dataclass
class EvalReport:
    n_draws: int
    n_test: int
    error: float | None = None
    nll: float | None = None
    ece: float | None = None
    mse: float | None = None
    ood_auroc: float | None = None
    ood_auroc_flipped: float | None = None
    rotation: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"n_draws": self.n_draws, "n_test": self.n_test}
        for k in ("error", "nll", "ece", "mse", "ood_auroc", "ood_auroc_flipped"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        if self.rotation:
            out["rotation"] = self.rotation
        if self.metadata:
            out["metadata"] = self.metadata
        return out


def evaluate(draws, spec: ModelSpec, x: np.ndarray, targets: np.ndarray,
             x_ood: np.ndarray | None = None,
             rotations: list[float] | None = None,
             n_bins: int = 15, metadata: dict | None = None) -> EvalReport:
    """Full predictive report for one ensemble on one test set."""
    draws = _draw_list(draws)
    report = EvalReport(n_draws=len(draws), n_test=int(x.shape[0]),
                        metadata=dict(metadata or {}))
    if spec.task == "regression":
        preds = ensemble_regression(draws, spec, x)
        report.mse = mse(preds, targets)
        return report
    probs = ensemble_probs(draws, spec, x)
    report.error = test_error(probs, targets)
    report.nll = test_nll(probs, targets)
    report.ece = ece(probs, targets, n_bins=n_bins)
    if x_ood is not None:
        auroc = ood_auroc(confidence_scores(probs),
                          confidence_scores(ensemble_probs(draws, spec, x_ood)))
        report.ood_auroc = auroc
        report.ood_auroc_flipped = 1.0 - auroc
    if rotations:
        for rep in rotation_sweep(draws, spec, x, targets, rotations, n_bins=n_bins):
            report.rotation.append({"angle": rep.metadata["angle"], "error": rep.error,
                                    "nll": rep.nll, "ece": rep.ece})
    return report


def rotation_sweep(archive, spec: ModelSpec, images: np.ndarray,
                   targets: np.ndarray, angles: list[float],
                   n_bins: int = 15) -> list[EvalReport]:
    """Evaluate the ensemble on rotated copies of the test images."""
    from .data import rotate_images

    draws = _draw_list(archive)
    reports = []
    for angle in angles:
        probs = ensemble_probs(draws, spec, rotate_images(images, angle))
        reports.append(EvalReport(
            n_draws=len(draws), n_test=int(images.shape[0]),
            error=test_error(probs, targets), nll=test_nll(probs, targets),
            ece=ece(probs, targets, n_bins=n_bins),
            metadata={"angle": float(angle)}))
    return reports
