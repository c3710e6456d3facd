"""Per-treatment tail shape from the pilot-median-centred outcome.

At each grid point ``t0`` the outcome is centred by its kernel-weighted
median and the absolute deviations are treated as a weighted sample. A
kernel-weighted Hill estimator evaluated over a grid of top fractions
``kappa`` decides whether a plateau exists (coefficient of variation below
``cv_threshold``); where it does, the shape is the median over ``kappa`` of
the weighted moment (DEdH) estimator, bias-corrected by a damped
half-sample jackknife. Nothing here looks at a fitted dose-response curve,
so the output is the same whichever core estimator is used downstream.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._seeding import rng_for
from .kernels import WeightedSample, gaussian_weights, silverman_bandwidth, sorted_cumulative, weighted_median

KAPPA_GRID = (0.04, 0.06, 0.08, 0.10, 0.12, 0.15, 0.20)
MIN_EXCEEDANCES = 5
# observations lighter than this (relative to the heaviest) do not count
# towards exceedance floors or the half-sample pool
_LIGHT = 1e-6


@dataclass(frozen=True)
class PDHTEConfig:
    kappa_grid: tuple = KAPPA_GRID
    cv_threshold: float = 0.25
    lam: float = 0.5
    n_jk: int = 4
    global_accept_floor: float = 0.70
    scale_kappa: float = 0.10
    seed: int = 0

    def __post_init__(self):
        k = tuple(float(x) for x in self.kappa_grid)
        if not k or any(not 0 < x < 0.5 for x in k):
            raise ValueError("kappa values must lie in (0, 0.5)")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if self.n_jk < 1:
            raise ValueError("n_jk must be positive")
        object.__setattr__(self, "kappa_grid", k)


@dataclass(frozen=True)
class PointEstimate:
    xi: float
    sigma: float
    cv: float
    xi_full: float
    xi_half: float
    threshold: float
    accepted: bool


@dataclass(frozen=True)
class PerTTailCurve:
    grid: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    cv: np.ndarray
    accepted: np.ndarray
    globally_refused: bool
    threshold: np.ndarray = field(repr=False, default=None)
    pilot_median: np.ndarray = field(repr=False, default=None)

    @property
    def accept_fraction(self):
        return float(np.mean(self.accepted)) if self.accepted.size else 0.0


@dataclass(frozen=True)
class StabilizedWeights:
    sw: np.ndarray
    clipped_fraction: float


def _min_weight(w):
    return _LIGHT * float(w.max()) if w.size else 0.0


def pilot_centered_deviations(Y, T, t0, h, extra_weights=None):
    """Absolute deviations from the kernel-weighted median of ``Y`` at ``t0``."""
    w = gaussian_weights(T, t0, h)
    if extra_weights is not None:
        w = w * np.asarray(extra_weights, dtype=np.float64)
    if not w.sum() > 0:
        raise ValueError(f"zero total kernel weight at t0={t0:.4g}")
    Y = np.asarray(Y, dtype=np.float64)
    med = weighted_median(Y, w)
    return WeightedSample(np.abs(Y - med), w), med


class _Sorted:
    """A weighted sample sorted once and reused across kappa values."""

    def __init__(self, ws):
        self.values, self.weights, _ = sorted_cumulative(ws)
        self.min_weight = _min_weight(self.weights)

    def moments(self, kappas):
        return _backend.tail_log_moments(self.values, self.weights, np.asarray(kappas, dtype=np.float64),
                                         self.min_weight)


def _hill_from(m1, n_top):
    return np.where(n_top >= MIN_EXCEEDANCES, m1, np.nan)


def _dedh_from(m1, m2, n_top):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = m1 * m1 / m2
        xi = m1 + 1.0 - 0.5 / (1.0 - ratio)
    ok = (n_top >= MIN_EXCEEDANCES) & (m2 > 0) & (ratio != 1.0) & np.isfinite(xi)
    return np.where(ok, xi, np.nan)


def kw_hill(dev, kappa):
    """Kernel-weighted Hill estimate at top fraction ``kappa`` (NaN if < 5 exceedances)."""
    m1, _, n_top, _ = _Sorted(dev).moments([kappa])
    return float(_hill_from(m1, n_top)[0])


def kw_dedh(dev, kappa):
    """Kernel-weighted DEdH moment estimate ``M1 + 1 - 1/(2(1 - M1^2/M2))`` (NaN if degenerate)."""
    m1, m2, n_top, _ = _Sorted(dev).moments([kappa])
    return float(_dedh_from(m1, m2, n_top)[0])


def cv_of(values):
    """MAD over kappa divided by ``max(|median|, 0.05)``; +inf with fewer than 3 values."""
    h = np.asarray(values, dtype=np.float64)
    h = h[np.isfinite(h)]
    if h.size < 3:
        return np.inf
    med = np.median(h)
    mad = np.median(np.abs(h - med))
    return float(mad / max(abs(med), 0.05))


def plateau_cv(dev, cfg=None):
    cfg = cfg or PDHTEConfig()
    m1, _, n_top, _ = _Sorted(dev).moments(cfg.kappa_grid)
    return cv_of(_hill_from(m1, n_top))


def _median_dedh(sorted_ws, kappas):
    m1, m2, n_top, _ = sorted_ws.moments(kappas)
    xs = _dedh_from(m1, m2, n_top)
    xs = xs[np.isfinite(xs)]
    return float(np.median(xs)) if xs.size else np.nan


def pdhte_point(dev, cfg=None, seed=0):
    """Plateau test plus damped-jackknife DEdH shape at one treatment value.

    Returns a PointEstimate whose ``accepted`` flag is False (and ``xi``
    NaN) when the Hill plateau CV is not below ``cv_threshold``.
    """
    cfg = cfg or PDHTEConfig()
    full = _Sorted(dev)
    kappas = cfg.kappa_grid
    m1, m2, n_top, anchor = full.moments(kappas)
    cv = cv_of(_hill_from(m1, n_top))
    refused = PointEstimate(np.nan, np.nan, cv, np.nan, np.nan, np.nan, False)
    if not cv < cfg.cv_threshold:
        return refused
    dedh = _dedh_from(m1, m2, n_top)
    if not np.any(np.isfinite(dedh)):
        return refused
    xi_full = float(np.median(dedh[np.isfinite(dedh)]))

    pool = np.flatnonzero(dev.weights > _min_weight(dev.weights))
    half = pool.shape[0] // 2
    rng = rng_for(seed, "jackknife")
    halves = []
    for _ in range(cfg.n_jk):
        idx = rng.choice(pool, size=half, replace=False)
        x = _median_dedh(_Sorted(dev.subset(idx)), kappas)
        if np.isfinite(x):
            halves.append(x)
    xi_half = float(np.mean(halves)) if halves else xi_full
    xi = xi_full + cfg.lam * (xi_full - xi_half)

    sm1, _, s_top, s_anchor = full.moments([cfg.scale_kappa])
    sigma = float(s_anchor[0] * sm1[0] * (1.0 - min(xi, 0.0)))
    if not (np.isfinite(sigma) and sigma > 0 and s_top[0] >= MIN_EXCEEDANCES):
        return refused
    return PointEstimate(xi=float(xi), sigma=sigma, cv=cv, xi_full=xi_full, xi_half=xi_half,
                         threshold=float(s_anchor[0]), accepted=True)


def pdhte_curve(Y, T, grid, cfg=None, extra_weights=None, bandwidth=None):
    """PDHTE+JK over a treatment grid, with global refusal below the accept floor."""
    cfg = cfg or PDHTEConfig()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    h = silverman_bandwidth(T) if bandwidth is None else bandwidth
    k = grid.shape[0]
    xi = np.full(k, np.nan)
    sigma = np.full(k, np.nan)
    cv = np.full(k, np.inf)
    thr = np.full(k, np.nan)
    med = np.full(k, np.nan)
    acc = np.zeros(k, dtype=bool)
    for i, t0 in enumerate(grid):
        dev, med[i] = pilot_centered_deviations(Y, T, t0, h, extra_weights)
        est = pdhte_point(dev, cfg, seed=rng_for(cfg.seed, "pdhte-point", i, t0).integers(2**63))
        cv[i] = est.cv
        if est.accepted:
            xi[i], sigma[i], thr[i], acc[i] = est.xi, est.sigma, est.threshold, True
    return PerTTailCurve(grid=grid, xi=xi, sigma=sigma, cv=cv, accepted=acc,
                         globally_refused=bool(acc.mean() < cfg.global_accept_floor),
                         threshold=thr, pilot_median=med)


def _winsorize_clip(sw, winsor_pct, clip_mult):
    cap = np.percentile(sw, winsor_pct)
    out = np.minimum(sw, cap)
    out = np.minimum(out, clip_mult * np.median(out))
    return out


def gps_weights(sample, nuisance, winsor_pct=99.0, clip_mult=10.0):
    """Stabilized generalized-propensity-score weights ``f_T(T) / f_{T|X}(T|X)``.

    Both densities are Gaussian: the conditional one centred at the
    cross-fit ``m_hat`` with the mean squared treatment residual as
    variance, the marginal one with the sample mean and variance of ``T``.
    Weights are winsorized at ``winsor_pct`` then hard-clipped at
    ``clip_mult`` times their median.
    """
    T = sample.T
    resid = T - nuisance.m_hat
    var_c = float(np.mean(resid * resid))
    var_m = float(np.var(T))
    if not (var_c > 0 and var_m > 0):
        raise ValueError("zero treatment variance: stabilized weights undefined")
    # log f_T - log f_{T|X}
    log_ratio = (-0.5 * (T - T.mean()) ** 2 / var_m - 0.5 * np.log(var_m)) - (
        -0.5 * resid * resid / var_c - 0.5 * np.log(var_c))
    raw = np.exp(log_ratio)
    sw = _winsorize_clip(raw, winsor_pct, clip_mult)
    return StabilizedWeights(sw=sw, clipped_fraction=float(np.mean(sw < raw)))


def overlap_grid(T, points=25, lower=5.0, upper=95.0):
    """Grid restricted to the adequate-overlap interior of ``T``."""
    lo, hi = np.percentile(T, [lower, upper])
    return np.linspace(lo, hi, points)
