"""Empirical analysis of trained weights: marginal fits, Q-Q data, spatial
covariance of convolution filters, kernel lengthscale fits, and spectra.

Location-scale fits are maximum likelihood. The Student-t fit profiles the
likelihood over the degrees of freedom: an EM loop fits (mu, sigma) at fixed
nu, and a grid plus golden-section search maximises over log nu in
[log 0.5, log 1000]. Near-Gaussian data therefore reports a nu near the
upper bound rather than infinity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, ndtri, stdtr
from scipy.stats import kurtosis

from .priors import grid_distances

_LOG_2PI = float(np.log(2.0 * np.pi))

NU_LOG_BOUNDS = (math.log(0.5), math.log(1000.0))
LENGTHSCALE_BOUNDS = (0.05, 100.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MarginalFit:
    family: str
    mu: float
    scale: float
    loglik: float
    n: int
    nu: float | None = None
    converged: bool = True


def _t_loglik(x: np.ndarray, mu: float, sigma: float, nu: float) -> float:
    z2 = ((x - mu) / sigma) ** 2
    const = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi) - math.log(sigma)
    return float(x.size * const - (nu + 1) / 2 * np.log1p(z2 / nu).sum())


def _t_em(x: np.ndarray, nu: float, tol: float = 1e-8,
          max_iter: int = 500) -> tuple[float, float, bool]:
    """EM for (mu, sigma) of a Student-t with fixed nu, via the latent
    scale-mixture weights u_i = (nu+1)/(nu + ((x_i-mu)/sigma)^2)."""
    mu = float(np.median(x))
    sigma = float(x.std()) or 1e-8
    for _ in range(max_iter):
        z2 = ((x - mu) / sigma) ** 2
        u = (nu + 1.0) / (nu + z2)
        mu_new = float((u * x).sum() / u.sum())
        var_new = float((u * (x - mu_new) ** 2).mean())
        sigma_new = math.sqrt(max(var_new, 1e-300))
        done = (abs(mu_new - mu) < tol * max(1.0, abs(mu))
                and abs(sigma_new - sigma) < tol * max(1.0, sigma))
        mu, sigma = mu_new, sigma_new
        if done:
            return mu, sigma, True
    return mu, sigma, False


def _golden_max(f, lo: float, hi: float, tol: float = 1e-9) -> tuple[float, float]:
    """Golden-section maximisation of a unimodal f on [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def fit_location_scale(family: str, samples: np.ndarray) -> MarginalFit:
    """Maximum-likelihood location-scale fit for 'gaussian' or 'laplace'."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if family == "gaussian":
        mu = float(x.mean())
        sigma = float(x.std())
        if sigma == 0.0:
            raise ValueError("degenerate sample: zero variance")
        ll = -0.5 * x.size * (_LOG_2PI + 2 * math.log(sigma) + 1.0)
        return MarginalFit("gaussian", mu, sigma, float(ll), x.size)
    if family == "laplace":
        mu = float(np.median(x))
        b = float(np.abs(x - mu).mean())
        if b == 0.0:
            raise ValueError("degenerate sample: zero spread")
        ll = -x.size * (math.log(2.0 * b) + 1.0)
        return MarginalFit("laplace", mu, b, float(ll), x.size)
    raise ValueError(f"unknown family {family!r} (use fit_student_t for student_t)")


class _EvalBudget(Exception):
    pass


def fit_student_t(samples: np.ndarray, grid_points: int = 25,
                  max_evals: int = 500) -> MarginalFit:
    """Profile-likelihood Student-t fit over nu in [0.5, 1000].

    Heavier-than-Gaussian data lands at a finite interior nu; Gaussian-like
    data pushes nu toward the upper search bound. A coarse log-nu grid
    brackets the optimum before golden-section refinement. If the outer
    search exhausts ``max_evals`` profile evaluations, the best point so far
    is returned with ``converged=False``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 10:
        raise ValueError("need at least 10 samples")
    lo, hi = NU_LOG_BOUNDS
    cache: dict[float, tuple[float, float, float, bool]] = {}

    def profile(log_nu: float) -> float:
        log_nu = float(log_nu)
        if log_nu not in cache:
            if len(cache) >= max_evals:
                raise _EvalBudget
            nu = math.exp(log_nu)
            mu, sigma, ok = _t_em(x, nu)
            cache[log_nu] = (mu, sigma, _t_loglik(x, mu, sigma, nu), ok)
        return cache[log_nu][2]

    budget_ok = True
    try:
        grid = np.linspace(lo, hi, grid_points)
        vals = [profile(g) for g in grid]
        i = int(np.argmax(vals))
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, grid_points - 1)]
        if a != b:
            _golden_max(profile, float(a), float(b))
    except _EvalBudget:
        budget_ok = False
    best_log_nu = max(cache, key=lambda k: cache[k][2])
    mu, sigma, ll, ok = cache[best_log_nu]
    return MarginalFit("student_t", mu, sigma, float(ll), x.size,
                       nu=float(math.exp(best_log_nu)), converged=ok and budget_ok)


def marginal_report(x: np.ndarray) -> dict[str, MarginalFit]:
    """All three marginal fits, keyed by family."""
    return {
        "gaussian": fit_location_scale("gaussian", x),
        "laplace": fit_location_scale("laplace", x),
        "student_t": fit_student_t(x),
    }


def _t_inv_cdf(p: float, nu: float, tol: float = 1e-10) -> float:
    """Inverse CDF of the standard Student-t by bracketed bisection."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    lo, hi = -1.0, 1.0
    while stdtr(nu, lo) > p:
        lo *= 2.0
    while stdtr(nu, hi) < p:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stdtr(nu, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def qq_data(x: np.ndarray, fit: MarginalFit) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical, empirical) quantiles at plotting positions (i - 0.5)/n."""
    xs = np.sort(np.asarray(x, dtype=np.float64).ravel())
    n = xs.size
    p = (np.arange(1, n + 1) - 0.5) / n
    if fit.family == "gaussian":
        theo = fit.mu + fit.scale * ndtri(p)
    elif fit.family == "laplace":
        theo = np.where(p < 0.5,
                        fit.mu + fit.scale * np.log(2.0 * p),
                        fit.mu - fit.scale * np.log(2.0 * (1.0 - p)))
    elif fit.family == "student_t":
        theo = fit.mu + fit.scale * np.array([_t_inv_cdf(pi, fit.nu) for pi in p])
    else:
        raise ValueError(f"unknown family {fit.family!r}")
    return theo, xs


@dataclass(frozen=True)
class SpatialCovariance:
    """Covariance of flattened conv filters over the channel-pair samples."""

    cov: np.ndarray
    normalized: np.ndarray
    n_samples: int
    note: str = "ddof=1 over out*in channel pairs; normalized by the max variance"


def spatial_covariance(filters: np.ndarray) -> SpatialCovariance:
    """Empirical covariance of filter tensors over their spatial grid.

    ``filters`` is [out, in, kh, kw]; each (out, in) slice is one length
    kh*kw observation. The covariance uses 1/(C-1) normalisation with
    C = out*in observations; ``normalized`` divides by the largest diagonal
    entry so layers of different scale are comparable.
    """
    f = np.asarray(filters, dtype=np.float64)
    if f.ndim != 4:
        raise ValueError(f"filters must be 4-D [out, in, kh, kw], got shape {f.shape}")
    v = f.reshape(-1, f.shape[2] * f.shape[3])
    if v.shape[0] < 2:
        raise ValueError("need at least 2 filter slices")
    cov = np.cov(v, rowvar=False)
    cov = (cov + cov.T) / 2.0
    peak = float(cov.diagonal().max())
    normalized = cov / peak if peak > 0.0 else np.zeros_like(cov)
    return SpatialCovariance(cov, normalized, v.shape[0])


@dataclass(frozen=True)
class KernelFit:
    kernel: str
    sigma: float
    lengthscale: float
    loglik: float
    grid_lengthscales: np.ndarray = field(repr=False, default=None)
    grid_logliks: np.ndarray = field(repr=False, default=None)


def _kernel_matrix(d: np.ndarray, lengthscale: float, kernel: str) -> np.ndarray:
    if kernel == "exponential":
        return np.exp(-d / lengthscale)
    if kernel == "squared_exponential":
        return np.exp(-(d ** 2) / (2.0 * lengthscale ** 2))
    raise ValueError(f"unknown kernel {kernel!r}")


def _chol_jitter(k: np.ndarray) -> np.ndarray:
    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(k + jitter * np.eye(k.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("kernel matrix is not positive definite even with jitter")


def fit_kernel_lengthscale(filters: np.ndarray, kh: int | None = None,
                           kw: int | None = None, kernel: str = "exponential",
                           grid_points: int = 61) -> KernelFit:
    """Maximum-likelihood (sigma, lengthscale) of a stationary kernel over
    the filter grid, assuming zero-mean filter slices.

    ``filters`` is either [out, in, kh, kw] (grid shape inferred) or a flat
    [samples, kh*kw] array with kh and kw given. The amplitude is profiled
    in closed form: sigma^2(l) = mean of v^T K(l)^{-1} v / k over slices.
    The lengthscale is maximised on a log grid over [0.05, 100] and refined
    by golden section; candidates whose kernel matrix stays singular after a
    jittered retry are skipped. Uncorrelated data drives the fit to the
    lower bound since K -> I as l -> 0.
    """
    f = np.asarray(filters, dtype=np.float64)
    if f.ndim == 4:
        kh, kw = f.shape[2], f.shape[3]
    elif kh is None or kw is None:
        raise ValueError("kh and kw are required for non-4-D filter input")
    v = f.reshape(-1, kh * kw)
    c, k = v.shape
    if c < 2:
        raise ValueError("need at least 2 filter vectors")
    d = grid_distances(kh, kw)

    def loglik(lam: float) -> float:
        km = _kernel_matrix(d, lam, kernel)
        try:
            chol = _chol_jitter(km)
        except np.linalg.LinAlgError:
            return -np.inf
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        z = np.linalg.solve(chol, v.T)
        s2 = float((z ** 2).sum()) / (c * k)
        if s2 <= 0.0:
            return -np.inf
        return -0.5 * (c * k * (_LOG_2PI + math.log(s2) + 1.0) + c * logdet)

    grid = np.exp(np.linspace(math.log(LENGTHSCALE_BOUNDS[0]),
                              math.log(LENGTHSCALE_BOUNDS[1]), grid_points))
    vals = np.array([loglik(g) for g in grid])
    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid_points - 1)]
    if lo == hi:
        lam, ll = float(grid[i]), float(vals[i])
    else:
        log_lam, ll = _golden_max(lambda t: loglik(math.exp(t)),
                                  math.log(lo), math.log(hi))
        lam = math.exp(log_lam)
        if vals[i] > ll:
            lam, ll = float(grid[i]), float(vals[i])
    km = _kernel_matrix(d, lam, kernel)
    z = np.linalg.solve(_chol_jitter(km), v.T)
    sigma = math.sqrt(float((z ** 2).sum()) / (c * k))
    return KernelFit(kernel, sigma, float(lam), float(ll), grid, vals)


@dataclass(frozen=True)
class OffDiagReport:
    """Off-diagonal covariance entries of a weight matrix next to an iid
    Gaussian baseline of matched shape and variance.

    Kurtosis values are the plain (non-excess) fourth standardized moment,
    so an iid Gaussian baseline sits near 3 and the empirical/baseline ratio
    measures heavy-tail excess.
    """

    row_offdiag: np.ndarray
    col_offdiag: np.ndarray
    baseline_row_offdiag: np.ndarray
    baseline_col_offdiag: np.ndarray
    kurtosis_row: float
    kurtosis_col: float
    baseline_kurtosis_row: float
    baseline_kurtosis_col: float
    kurtosis_ratio_row: float
    kurtosis_ratio_col: float
    baseline_seed: int


def _offdiag(cov: np.ndarray) -> np.ndarray:
    mask = ~np.eye(cov.shape[0], dtype=bool)
    return cov[mask]


def offdiag_distribution(w: np.ndarray, baseline_seed: int = 0) -> OffDiagReport:
    """Distributions of off-diagonal input/output covariances of a dense
    weight matrix, against a matched iid Gaussian baseline."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or min(w.shape) < 2:
        raise ValueError(f"need a 2-D weight matrix with both dims >= 2, got {w.shape}")
    rng = np.random.default_rng(baseline_seed)
    base = rng.normal(w.mean(), w.std(), size=w.shape)
    row = _offdiag(np.cov(w, rowvar=False))     # covariance across input dims
    col = _offdiag(np.cov(w.T, rowvar=False))   # covariance across output dims
    brow = _offdiag(np.cov(base, rowvar=False))
    bcol = _offdiag(np.cov(base.T, rowvar=False))

    def _kurt(v: np.ndarray) -> float:
        if v.size < 4 or np.ptp(v) == 0.0:
            return float("nan")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return float(kurtosis(v, fisher=False))

    kr = _kurt(row)
    kc = _kurt(col)
    bkr = _kurt(brow)
    bkc = _kurt(bcol)
    return OffDiagReport(
        row_offdiag=row, col_offdiag=col,
        baseline_row_offdiag=brow, baseline_col_offdiag=bcol,
        kurtosis_row=kr, kurtosis_col=kc,
        baseline_kurtosis_row=bkr, baseline_kurtosis_col=bkc,
        kurtosis_ratio_row=kr / bkr if bkr > 0 else float("nan"),
        kurtosis_ratio_col=kc / bkc if bkc > 0 else float("nan"),
        baseline_seed=baseline_seed,
    )


def singular_values(w: np.ndarray) -> np.ndarray:
    """Singular values of a 2-D weight matrix, descending."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"need a 2-D matrix, got shape {w.shape}")
    return np.linalg.svd(w, compute_uv=False)
