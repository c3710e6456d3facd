"""Cross-fit DML residualization and local-linear M-estimation of the ADRF.

The second stage regresses the outcome residual ``Y - g_hat(X)`` on ``T``
with a kernel-weighted local-linear M-estimator. Three losses are
available: squared error, Huber, and the redescending Welsch loss with a
constant clipping ``gamma`` (default 0.10).
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._seeding import rng_for
from .errors import SingularDesignError
from .kernels import gaussian_weights, silverman_bandwidth, weighted_mad

LOSSES = ("standard_l2", "huber", "welsch")
_ALIASES = {"l2": "standard_l2", "standard": "standard_l2", "ols": "standard_l2"}

MAD_SCALE = 1.4826
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 50
# kernel weights below this are dropped from the local fits
_NEGLIGIBLE = 1e-12
# "non-negligible" for the minimum-support check (about 3.7 bandwidths)
_SUPPORT_WEIGHT = 1e-3
# nuisance bandwidth multipliers tried by leave-one-out CV, and the CV subsample size
NW_MULTIPLIERS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
CV_SUBSAMPLE = 800


@dataclass(frozen=True)
class LossSpec:
    kind: str = "welsch"
    huber_epsilon: float = 1.35
    welsch_gamma: float = 0.10

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSSES}")
        if not self.huber_epsilon > 0 or not self.welsch_gamma > 0:
            raise ValueError("huber_epsilon and welsch_gamma must be positive")
        object.__setattr__(self, "kind", kind)

    def weights(self, u):
        """IRLS weights psi(u)/u for standardized residuals ``u``."""
        if self.kind == "standard_l2":
            return np.ones_like(u)
        if self.kind == "huber":
            au = np.abs(u)
            return np.where(au <= self.huber_epsilon, 1.0, self.huber_epsilon / np.maximum(au, 1e-300))
        return np.exp(-self.welsch_gamma * u * u)

    def rho(self, u):
        if self.kind == "standard_l2":
            return 0.5 * u * u
        if self.kind == "huber":
            au = np.abs(u)
            eps = self.huber_epsilon
            return np.where(au <= eps, 0.5 * u * u, eps * au - 0.5 * eps * eps)
        g = self.welsch_gamma
        return (1.0 - np.exp(-g * u * u)) / (2.0 * g)


@dataclass(frozen=True)
class NuisanceFit:
    g_hat: np.ndarray
    m_hat: np.ndarray
    fold_id: np.ndarray

    def outcome_residuals(self, sample):
        return sample.Y - self.g_hat

    def treatment_residuals(self, sample):
        return sample.T - self.m_hat


@dataclass(frozen=True)
class ADRFCurve:
    grid: np.ndarray
    theta: np.ndarray
    loss: str
    bandwidth: float
    converged: np.ndarray = field(default=None, repr=False)

    def at(self, t):
        """Linear interpolation of the curve (constant beyond the grid ends)."""
        return np.interp(t, self.grid, self.theta)


@dataclass
class LocalFit:
    intercept: float
    slope: float
    n_iter: int
    converged: bool
    objective: list


def default_grid(t, points=25, lower=0.05, upper=0.95):
    """Evenly spaced grid between two empirical quantiles of the treatment."""
    lo, hi = np.quantile(np.asarray(t, dtype=np.float64), [lower, upper])
    return np.linspace(lo, hi, points)


def _fold_ids(n, k_folds, seed):
    perm = rng_for(seed, "folds", n, k_folds).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[perm] = np.arange(n) % k_folds
    return fold


def _nw_bandwidths(d, n):
    # normal-reference rule for a d-dimensional product Gaussian kernel on
    # standardized covariates; reduces to Silverman's 1.06 n^-1/5 at d = 1
    return np.full(d, (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0)))


def _loo_mse(Z, y, h):
    """Leave-one-out squared error of Nadaraya-Watson at bandwidths ``h``."""
    d2 = np.zeros((Z.shape[0], Z.shape[0]))
    for c in range(Z.shape[1]):
        diff = (Z[:, None, c] - Z[None, :, c]) / h[c]
        d2 += diff * diff
    K = np.exp(-0.5 * d2)
    np.fill_diagonal(K, 0.0)
    s = K.sum(axis=1)
    ok = s > 1e-300
    pred = np.where(ok, K @ y / np.where(ok, s, 1.0), y.mean())
    return float(np.mean((y - pred) ** 2))


def _cv_multiplier(Z, y, rng):
    m = Z.shape[0]
    idx = rng.choice(m, size=min(CV_SUBSAMPLE, m), replace=False)
    base = _nw_bandwidths(Z.shape[1], idx.shape[0])
    scores = [_loo_mse(Z[idx], y[idx], c * base) for c in NW_MULTIPLIERS]
    return NW_MULTIPLIERS[int(np.argmin(scores))]


def crossfit_nuisances(sample, k_folds=3, seed=0, bandwidth="cv"):
    """Out-of-fold Nadaraya-Watson estimates of E[Y|X] and E[T|X].

    Parameters
    ----------
    bandwidth : {"cv", "rule"}
        ``rule`` uses the normal-reference bandwidth for every target.
        ``cv`` (default) scales it per fold and target by the multiplier in
        ``NW_MULTIPLIERS`` with the smallest leave-one-out error on a seeded
        subsample of the training folds; a target that does not depend on
        ``X`` gets a wide kernel and a nearly flat fit.
    """
    n = sample.n
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if n < 10 * k_folds:
        raise ValueError(f"need at least {10 * k_folds} observations for {k_folds} folds, got {n}")
    if bandwidth not in ("cv", "rule"):
        raise ValueError(f"bandwidth must be 'cv' or 'rule', got {bandwidth!r}")
    X = sample.X
    sd = X.std(axis=0)
    keep = sd > 0
    Z = (X[:, keep] - X[:, keep].mean(axis=0)) / sd[keep]
    targets = np.column_stack([sample.Y, sample.T])
    fold = _fold_ids(n, k_folds, seed)
    pred = np.empty_like(targets)
    for k in range(k_folds):
        test = fold == k
        train = ~test
        if Z.shape[1] == 0:
            pred[test] = targets[train].mean(axis=0)
            continue
        h = _nw_bandwidths(Z.shape[1], int(train.sum()))
        if bandwidth == "rule":
            pred[test] = _backend.nw_predict(Z[train], targets[train], Z[test], h)
            continue
        rng = rng_for(seed, "nw-cv", n, k)
        for j in range(targets.shape[1]):
            c = _cv_multiplier(Z[train], targets[train, j], rng)
            pred[test, j] = _backend.nw_predict(Z[train], targets[train, j:j + 1], Z[test], c * h)[:, 0]
    return NuisanceFit(g_hat=pred[:, 0], m_hat=pred[:, 1], fold_id=fold)


def _wls(x, y, w):
    s0 = w.sum()
    wx = w * x
    s1 = wx.sum()
    s2 = (wx * x).sum()
    det = s0 * s2 - s1 * s1
    if not det > 1e-12 * s0 * s2:
        raise SingularDesignError("singular kernel-weighted design: treatment values in the band are identical")
    t0 = (w * y).sum()
    t1 = (wx * y).sum()
    return (s2 * t0 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det


def fit_local_m(r, t, t0, h, loss, fixed_scale=None):
    """Kernel-weighted local-linear M-fit at ``t0`` by IRLS.

    Starts from the kernel-weighted least-squares line. Each iteration
    re-estimates the scale as 1.4826 times the kernel-weighted MAD of the
    current residuals (unless ``fixed_scale`` is given) and reweights by
    ``kernel * psi(u)/u``. Stops when the largest coefficient change falls
    below 1e-8 relative, or after 50 iterations.
    """
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    kw = gaussian_weights(t, t0, h)
    if np.count_nonzero(kw > _SUPPORT_WEIGHT) < 10:
        raise ValueError(f"fewer than 10 observations near t0={t0:.4g} at bandwidth {h:.4g}")
    band = kw > _NEGLIGIBLE
    kw, x, y = kw[band], t[band] - t0, r[band]
    a, b = _wls(x, y, kw)
    objective = []
    if loss.kind == "standard_l2":
        return LocalFit(a, b, 0, True, objective)
    converged = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        e = y - a - b * x
        scale = fixed_scale if fixed_scale is not None else MAD_SCALE * weighted_mad(e, kw)
        if not scale > 0:
            converged = True
            break
        u = e / scale
        objective.append(float(np.sum(kw * loss.rho(u))))
        a_new, b_new = _wls(x, y, kw * loss.weights(u))
        step = max(abs(a_new - a), abs(b_new - b))
        a, b = a_new, b_new
        if step <= IRLS_TOL * max(abs(a), abs(b), scale):
            converged = True
            break
    if fixed_scale is not None:
        objective.append(float(np.sum(kw * loss.rho((y - a - b * x) / fixed_scale))))
    return LocalFit(a, b, it, converged, objective)


def local_linear_m_fit(r, t, t0, h, loss):
    """Intercept of the local-linear M-fit at ``t0`` (warns on non-convergence)."""
    fit = fit_local_m(r, t, t0, h, loss)
    if not fit.converged:
        warnings.warn(f"IRLS did not converge at t0={t0:.4g}; returning last iterate", RuntimeWarning)
    return fit.intercept


def estimate_adrf(sample, grid, loss=None, k_folds=3, seed=0, nuisance=None, bandwidth=None):
    """ADRF curve: local-linear M-fit of ``Y - g_hat`` on ``T`` plus ``mean(g_hat)``."""
    loss = loss if loss is not None else LossSpec()
    if isinstance(loss, str):
        loss = LossSpec(loss)
    if nuisance is None:
        nuisance = crossfit_nuisances(sample, k_folds=k_folds, seed=seed)
    h = silverman_bandwidth(sample.T) if bandwidth is None else bandwidth
    r = nuisance.outcome_residuals(sample)
    level = float(np.mean(nuisance.g_hat))
    grid = np.asarray(grid, dtype=np.float64)
    theta = np.empty_like(grid)
    conv = np.empty(grid.shape, dtype=bool)
    for k, t0 in enumerate(grid):
        fit = fit_local_m(r, sample.T, t0, h, loss)
        theta[k] = fit.intercept + level
        conv[k] = fit.converged
    if not conv.all():
        warnings.warn(f"IRLS did not converge at {int((~conv).sum())} grid point(s)", RuntimeWarning)
    return ADRFCurve(grid=grid, theta=theta, loss=loss.kind, bandwidth=h, converged=conv)
