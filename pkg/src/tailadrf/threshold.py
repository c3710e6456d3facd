"""Composite-likelihood GPD threshold selection and the global tail report.

Residuals are modelled by a two-piece law on the real line: a Laplace bulk
truncated to ``|r| <= u`` carrying mass ``1 - p_tail`` and a symmetric GPD
tail for ``|r| > u`` carrying ``p_tail``. The threshold is the candidate
that maximizes the held-out mean log-density, subject to an exceedance
budget and an optional KS goodness-of-fit gate. If no candidate beats a
bulk-only Laplace fit on the holdout half the selection refuses.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov

from ._seeding import rng_for
from .errors import InvalidFitError
from .kernels import WeightedSample, weighted_mad, weighted_quantile

log = logging.getLogger(__name__)

MAD_SCALE = 1.4826
RETURN_PROBS = (0.01, 0.001)
# PWM identification breaks down at xi = 1/2; candidate scoring clips below it
_SCORING_XI_CAP = 0.49
_XI_ZERO = 1e-6


@dataclass(frozen=True)
class SpliceParams:
    u: float
    b: float
    xi: float
    sigma: float
    p_tail: float

    def __post_init__(self):
        if not (self.u > 0 and self.b > 0 and self.sigma > 0 and 0 <= self.p_tail <= 1):
            raise ValueError(f"invalid splice parameters: {self}")


@dataclass(frozen=True)
class ThresholdConfig:
    grid_size: int = 40
    n_min_exc: int = 30
    p_ks_min: float = 0.0
    holdout_fraction: float = 0.5
    bootstrap_b: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be at least 3")
        if self.n_min_exc < 10:
            raise ValueError("n_min_exc must be at least 10")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.bootstrap_b < 50:
            raise ValueError("bootstrap_b must be at least 50")


@dataclass(frozen=True)
class ThresholdSelection:
    u_star: float
    params: SpliceParams
    holdout_score: float
    null_score: float
    candidates: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class TailReport:
    refused: bool
    u_star: float = None
    xi_pwm: float = None
    xi_ci: tuple = None
    sigma_pwm: float = None
    p_ks: float = None
    regime: str = None
    return_levels: dict = None
    n_exc: int = None
    n: int = None
    # exceedances on the upper side only (r > u*)
    n_exc_upper: int = None

    def to_dict(self):
        """Flat JSON-ready mapping; numeric fields are omitted when refused."""
        if self.refused:
            return {"refused": True}
        out = {
            "refused": False,
            "u_star": self.u_star,
            "xi_pwm": self.xi_pwm,
            "xi_ci_lower": self.xi_ci[0],
            "xi_ci_upper": self.xi_ci[1],
            "sigma_pwm": self.sigma_pwm,
            "p_ks": self.p_ks,
            "regime": self.regime,
            "n_exc": self.n_exc,
            "n_exc_upper": self.n_exc_upper,
            "n": self.n,
        }
        for q, r in self.return_levels.items():
            out[f"return_level_{q:g}"] = r
        return out


def _pwm_moments(e):
    e = np.sort(np.asarray(e, dtype=np.float64))
    n = e.shape[0]
    a0 = e.mean()
    a1 = np.sum((n - np.arange(1, n + 1)) / (n - 1) * e) / n
    return a0, a1


def pwm_fit(exceedances, min_exc=5):
    """Probability-weighted-moment GPD fit of threshold exceedances.

    With ``a0`` the mean and ``a1 = mean((n-j)/(n-1) * e_(j))`` over the
    exceedances sorted ascending, ``xi = 2 - a0/(a0 - 2 a1)`` and
    ``sigma = 2 a0 a1 / (a0 - 2 a1)``.

    ``min_exc`` is the sample-size floor; the moments themselves need two.

    Raises
    ------
    InvalidFitError
        Fewer than ``min_exc`` exceedances, ``a0 == 2 a1``, or a non-positive
        scale.
    """
    if min_exc < 2:
        raise ValueError("min_exc must be at least 2")
    e = np.asarray(exceedances, dtype=np.float64)
    if e.shape[0] < min_exc:
        raise InvalidFitError(f"PWM needs at least {min_exc} exceedances, got {e.shape[0]}")
    a0, a1 = _pwm_moments(e)
    return _pwm_from_moments(a0, a1)


def _pwm_from_moments(a0, a1):
    d = a0 - 2.0 * a1
    # equal exceedances give d = 0 up to rounding
    if not (np.isfinite(d) and abs(d) > 1e-12 * abs(a0)):
        raise InvalidFitError("PWM undefined: a0 - 2 a1 = 0")
    xi = 2.0 - a0 / d
    sigma = 2.0 * a0 * a1 / d
    if not sigma > 0:
        raise InvalidFitError(f"PWM scale not positive ({sigma:.4g}); exceedances inconsistent with a GPD")
    return float(xi), float(sigma)


def weighted_pwm_fit(exceedances, weights):
    """PWM with weighted plotting positions.

    The plotting position of the j-th smallest exceedance is one minus the
    weight strictly below it, normalized by the total weight excluding its
    own; with equal weights this is exactly ``(n - j)/(n - 1)``.
    """
    e = np.asarray(exceedances, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if e.shape[0] < 5:
        raise InvalidFitError(f"PWM needs at least 5 exceedances, got {e.shape[0]}")
    order = np.argsort(e, kind="stable")
    e, w = e[order], w[order]
    total = w.sum()
    if not total > 0:
        raise InvalidFitError("zero total weight")
    below = np.cumsum(w) - w
    denom = total - w
    pos = np.where(denom > 0, 1.0 - below / np.where(denom > 0, denom, 1.0), 0.0)
    a0 = np.sum(w * e) / total
    a1 = np.sum(w * pos * e) / total
    return _pwm_from_moments(a0, a1)


def gpd_logpdf(y, xi, sigma):
    """GPD log-density of excesses ``y >= 0``; ``-inf`` outside the support."""
    y = np.asarray(y, dtype=np.float64)
    z = y / sigma
    if abs(xi) < _XI_ZERO:
        return -np.log(sigma) - z
    arg = 1.0 + xi * z
    out = np.full(y.shape, -np.inf)
    ok = arg > 0
    out[ok] = -np.log(sigma) - (1.0 / xi + 1.0) * np.log(arg[ok])
    return out


def gpd_cdf(y, xi, sigma):
    y = np.maximum(np.asarray(y, dtype=np.float64), 0.0)
    z = y / sigma
    if abs(xi) < _XI_ZERO:
        return -np.expm1(-z)
    arg = 1.0 + xi * z
    out = np.ones(y.shape)
    ok = arg > 0
    out[ok] = 1.0 - arg[ok] ** (-1.0 / xi)
    return out


def gpd_ppf(p, xi, sigma):
    p = np.asarray(p, dtype=np.float64)
    if abs(xi) < _XI_ZERO:
        return -sigma * np.log1p(-p)
    return sigma / xi * ((1.0 - p) ** (-xi) - 1.0)


def splice_logpdf(r, params):
    """Pointwise log-density of the Laplace-bulk / GPD-tail splice."""
    a = np.abs(np.asarray(r, dtype=np.float64))
    u, b, p = params.u, params.b, params.p_tail
    out = np.empty(a.shape)
    bulk = a <= u
    with np.errstate(divide="ignore"):
        out[bulk] = math.log1p(-p) if p < 1 else -np.inf
        out[bulk] += -a[bulk] / b - math.log(2.0 * b) - math.log(-math.expm1(-u / b))
        tail = ~bulk
        if p > 0:
            out[tail] = math.log(p) - math.log(2.0) + gpd_logpdf(a[tail] - u, params.xi, params.sigma)
        else:
            out[tail] = -np.inf
    return out


def splice_loglik(residuals, params):
    """Mean log-density of the residuals under the splice (``-inf`` if any point is off-support)."""
    lp = splice_logpdf(residuals, params)
    n_bad = int(np.count_nonzero(~np.isfinite(lp)))
    if n_bad:
        log.debug("splice log-likelihood: %d residual(s) outside the support", n_bad)
        return -np.inf
    return float(lp.mean())


def laplace_loglik(residuals, b):
    a = np.abs(np.asarray(residuals, dtype=np.float64))
    return float(np.mean(-a / b - math.log(2.0 * b)))


def gpd_ks_pvalue(exceedances, xi, sigma):
    """One-sample KS p-value against a fitted GPD (asymptotic Kolmogorov law)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    e = np.sort(np.asarray(exceedances, dtype=np.float64))
    n = e.shape[0]
    if n == 0:
        raise ValueError("no exceedances")
    cdf = gpd_cdf(e, xi, sigma)
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return float(kolmogorov(math.sqrt(n) * d))


def bootstrap_xi_ci(exceedances, B=200, seed=0, level=0.90):
    """Percentile bootstrap CI for the PWM shape.

    Resamples whose PWM fit is invalid are skipped; more than half invalid
    is an error. The interval is widened if needed so that it contains the
    full-sample estimate.
    """
    if B < 50:
        raise ValueError(f"B must be at least 50, got {B}")
    e = np.asarray(exceedances, dtype=np.float64)
    xi_full, _ = pwm_fit(e)
    rng = rng_for(seed, "bootstrap-xi", e.shape[0])
    n = e.shape[0]
    idx = rng.integers(0, n, size=(B, n))
    xs = []
    for row in idx:
        try:
            xs.append(pwm_fit(e[row])[0])
        except InvalidFitError:
            continue
    if len(xs) < B / 2:
        raise InvalidFitError(f"{B - len(xs)} of {B} bootstrap resamples gave invalid PWM fits")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(xs, [tail, 1.0 - tail])
    return float(min(lo, xi_full)), float(max(hi, xi_full))


def return_level(u, xi, sigma, n_exc, n, q):
    """Level exceeded with probability ``q``: ``u + sigma/xi * ((n_exc/(q n))**xi - 1)``.

    Uses the exact ``xi -> 0`` limit ``u + sigma * log(n_exc/(q n))`` when
    ``|xi| < 1e-6``.
    """
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if n_exc < 1:
        raise ValueError("n_exc must be at least 1")
    ratio = n_exc / (q * n)
    if abs(xi) < _XI_ZERO:
        level = u + sigma * math.log(ratio)
    else:
        level = u + sigma / xi * (ratio ** xi - 1.0)
    if level < u:
        log.debug("return level %.4g at q=%g lies below the threshold %.4g", level, q, u)
    return float(level)


def regime_from_ci(lo, hi):
    if lo > 0:
        return "frechet"
    if hi < 0:
        return "weibull"
    return "gumbel"


def candidate_thresholds(abs_r, grid_size, n_min_exc):
    n = abs_r.shape[0]
    ws = WeightedSample(abs_r, np.ones(n))
    upper = 1.0 - n_min_exc / n
    if not upper > 0.5:
        return np.empty(0)
    levels = np.linspace(0.5, upper, grid_size)
    return np.array([weighted_quantile(ws, lv) for lv in levels])


def _fit_splice(r_fit, u, cfg):
    """Fit (b, xi, sigma, p_tail) at threshold ``u`` on the fit half; None if a gate fails."""
    a = np.abs(r_fit)
    bulk = a <= u
    exc = a[~bulk] - u
    if exc.shape[0] < cfg.n_min_exc or bulk.sum() < 2:
        return None
    b = MAD_SCALE * weighted_mad(r_fit[bulk], np.ones(int(bulk.sum()))) / math.sqrt(2.0)
    if not b > 0:
        return None
    try:
        a0, a1 = _pwm_moments(exc)
        xi, sigma = _pwm_from_moments(a0, a1)
    except InvalidFitError:
        return None
    if xi > _SCORING_XI_CAP:
        # keep the exceedance mean a0 = sigma / (1 - xi) at the capped shape
        xi = _SCORING_XI_CAP
        sigma = a0 * (1.0 - xi)
    if cfg.p_ks_min > 0 and gpd_ks_pvalue(exc, xi, sigma) < cfg.p_ks_min:
        return None
    return SpliceParams(u=float(u), b=float(b), xi=float(xi), sigma=float(sigma),
                        p_tail=exc.shape[0] / r_fit.shape[0])


def select_threshold(residuals, cfg=None):
    """Held-out composite-likelihood threshold; ``None`` means refusal.

    Candidates are ``grid_size`` quantiles of ``|r|`` at levels evenly
    spaced in ``[0.5, 1 - n_min_exc/n]``. Parameters and gates use a seeded
    fit half, scores use the other half. The best admissible candidate is
    returned only if its holdout score beats a bulk-only Laplace fit
    (maximum-likelihood scale on the fit half).
    """
    cfg = cfg or ThresholdConfig()
    r = np.asarray(residuals, dtype=np.float64)
    n = r.shape[0]
    if n < 100:
        raise ValueError(f"threshold selection needs at least 100 residuals, got {n}")
    cands = candidate_thresholds(np.abs(r), cfg.grid_size, cfg.n_min_exc)
    perm = rng_for(cfg.seed, "holdout-split", n).permutation(n)
    n_hold = int(round(cfg.holdout_fraction * n))
    r_hold, r_fit = r[perm[:n_hold]], r[perm[n_hold:]]

    scores = np.full(cands.shape, -np.inf)
    fitted = [None] * cands.shape[0]
    for k, u in enumerate(cands):
        if not u > 0:
            continue
        params = _fit_splice(r_fit, u, cfg)
        if params is None:
            continue
        fitted[k] = params
        scores[k] = splice_loglik(r_hold, params)

    b0 = MAD_SCALE * weighted_mad(r_fit, np.ones(r_fit.shape[0])) / math.sqrt(2.0)
    null = laplace_loglik(r_hold, b0) if b0 > 0 else -np.inf
    if not np.any(np.isfinite(scores)):
        return None
    best = int(np.argmax(scores))
    if not scores[best] > null:
        return None
    return ThresholdSelection(u_star=float(cands[best]), params=fitted[best],
                              holdout_score=float(scores[best]), null_score=float(null),
                              candidates=cands, scores=scores)


def build_tail_report(residuals, cfg=None):
    """Threshold, PWM fit on all exceedances, KS p-value, bootstrap CI, regime and return levels."""
    cfg = cfg or ThresholdConfig()
    r = np.asarray(residuals, dtype=np.float64)
    sel = select_threshold(r, cfg)
    if sel is None:
        return TailReport(refused=True)
    a = np.abs(r)
    exc = a[a > sel.u_star] - sel.u_star
    try:
        xi, sigma = pwm_fit(exc)
        ci = bootstrap_xi_ci(exc, B=cfg.bootstrap_b, seed=cfg.seed)
    except InvalidFitError as err:
        log.info("tail report refused: %s", err)
        return TailReport(refused=True)
    n = r.shape[0]
    levels = {q: return_level(sel.u_star, xi, sigma, exc.shape[0], n, q) for q in RETURN_PROBS}
    return TailReport(
        refused=False,
        u_star=sel.u_star,
        xi_pwm=xi,
        xi_ci=ci,
        sigma_pwm=sigma,
        p_ks=gpd_ks_pvalue(exc, xi, sigma),
        regime=regime_from_ci(*ci),
        return_levels=levels,
        n_exc=int(exc.shape[0]),
        n=n,
        n_exc_upper=int(np.count_nonzero(r > sel.u_star)),
    )
