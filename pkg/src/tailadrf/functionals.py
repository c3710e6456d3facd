"""Tail-conditional causal functionals.

Combines a robust ADRF curve ``theta_W``, the global TailReport and the
per-treatment tail curve into: the recovered mean ADRF, the hybrid return
level ``Q_alpha(t)``, the conditional shortfall ``S_alpha(t)`` and the
causal-tail effect ``dQ_alpha/dt``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidFitError
from .kernels import WeightedSample, effective_n, gaussian_weights, silverman_bandwidth, weighted_quantile
from .threshold import pwm_fit

# below this exceedance probability a sign contributes no tail-mean term
P_FLOOR = 0.01
# a tail fit backed by fewer effective exceedances than this is replaced by the global one
MIN_EFF_EXCEEDANCES = 15.0
_XI_ZERO = 1e-6
EMPIRICAL = "empirical"
GPD = "gpd"


@dataclass(frozen=True)
class SignConditionalFits:
    grid: np.ndarray
    u_star: float
    xi_plus: float
    sigma_plus: float
    p_plus: np.ndarray
    xi_minus: float
    sigma_minus: float
    p_minus: np.ndarray


@dataclass(frozen=True)
class TailFunctionals:
    grid: np.ndarray
    alpha: float
    theta_w: np.ndarray
    q_alpha: np.ndarray
    q_mode: np.ndarray
    s_alpha: np.ndarray
    cte: np.ndarray
    ey_recovered: np.ndarray
    refused: bool

    def rows(self):
        """Per-grid records in the ``fit --tail-functionals`` CSV layout."""
        for k, t in enumerate(self.grid):
            yield {
                "t": float(t),
                "theta_w": float(self.theta_w[k]),
                "ey_recovered": float(self.ey_recovered[k]),
                "q_alpha": float(self.q_alpha[k]),
                "mode": str(self.q_mode[k]),
                "s_alpha": float(self.s_alpha[k]),
                "cte": float(self.cte[k]),
                "refused": bool(self.refused),
            }


def _side_fit(e):
    try:
        return pwm_fit(e)
    except InvalidFitError:
        return np.nan, np.nan


def sign_conditional_fits(residuals, T, u_star, grid, h, extra_weights=None):
    """PWM fits on ``{r > u*}`` and ``{r < -u*}`` with kernel-weighted exceedance rates.

    A side with fewer than 5 exceedances keeps its rate but gets NaN
    ``(xi, sigma)``.
    """
    if not u_star > 0:
        raise ValueError("u_star must be positive")
    r = np.asarray(residuals, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    up = r > u_star
    dn = r < -u_star
    xi_p, s_p = _side_fit(r[up] - u_star)
    xi_m, s_m = _side_fit(-r[dn] - u_star)
    p_plus = np.empty_like(grid)
    p_minus = np.empty_like(grid)
    for k, t0 in enumerate(grid):
        w = gaussian_weights(T, t0, h)
        if extra_weights is not None:
            w = w * extra_weights
        tot = w.sum()
        p_plus[k] = w[up].sum() / tot
        p_minus[k] = w[dn].sum() / tot
    return SignConditionalFits(grid=grid, u_star=float(u_star), xi_plus=xi_p, sigma_plus=s_p,
                               p_plus=p_plus, xi_minus=xi_m, sigma_minus=s_m, p_minus=p_minus)


def _tail_mean_term(p, theta, u, xi, sigma):
    # floor rule: a rare side contributes theta * p only
    if p < P_FLOOR:
        return theta * p
    if not (np.isfinite(xi) and np.isfinite(sigma)) or xi >= 1.0:
        return np.nan
    return p * (u + sigma / (1.0 - xi))


def recover_mean_adrf(theta_w, fits):
    """Mean ADRF from the robust curve plus the two sign-conditional tail means.

    ``E[Y(t)] = theta_W(t) + p_+ (u* + sigma_+/(1 - xi_+)) - p_- (u* + sigma_-/(1 - xi_-))``.
    Points where an active side has ``xi >= 1`` (or no fit) are NaN.
    """
    theta = np.asarray(theta_w.theta if hasattr(theta_w, "theta") else theta_w, dtype=np.float64)
    out = np.empty_like(theta)
    u = fits.u_star
    for k in range(theta.shape[0]):
        plus = _tail_mean_term(fits.p_plus[k], theta[k], u, fits.xi_plus, fits.sigma_plus)
        minus = _tail_mean_term(fits.p_minus[k], theta[k], u, fits.xi_minus, fits.sigma_minus)
        out[k] = theta[k] + (plus - minus)
    return out


def _empirical_mode(alpha, n_eff):
    return alpha * n_eff >= 1.0


@dataclass(frozen=True)
class TailAnchor:
    """GPD tail of ``Y(t0)`` above an outcome-scale ``level``.

    ``rate`` is the probability of exceeding ``level``; ``xi``/``sigma``
    describe the excess over it.
    """

    level: float
    rate: float
    xi: float
    sigma: float

    def quantile(self, alpha):
        ratio = self.rate / alpha
        if abs(self.xi) < _XI_ZERO:
            return self.level + self.sigma * math.log(ratio)
        return self.level + self.sigma / self.xi * (ratio ** self.xi - 1.0)


def local_anchor(Y, T, per_t, i, h, extra_weights=None):
    """Anchor from the per-treatment fit at grid index ``i`` (None if refused).

    The level is the pilot median plus the kernel-weighted
    ``(1 - kappa)``-quantile of ``|Y - median|``; the rate is the weighted
    share of outcomes above it.
    """
    if per_t is None or per_t.globally_refused or not per_t.accepted[i]:
        return None
    level = per_t.pilot_median[i] + per_t.threshold[i]
    w = gaussian_weights(T, per_t.grid[i], h)
    if extra_weights is not None:
        w = w * extra_weights
    rate = float(w[np.asarray(Y) > level].sum() / w.sum())
    if not rate > 0:
        return None
    return TailAnchor(level=float(level), rate=rate, xi=float(per_t.xi[i]), sigma=float(per_t.sigma[i]))


def global_anchor(theta_t0, report):
    """Anchor at ``theta_W(t0) + u*`` with the global PWM fit.

    The rate is the upper-side share ``#{r > u*}/n`` (``n_exc/n`` when the
    report does not carry it): the target is an upper quantile of ``Y``,
    while ``n_exc`` counts exceedances of ``|r|`` on both sides.
    """
    if report is None or report.refused:
        return None
    n_up = report.n_exc_upper if report.n_exc_upper is not None else report.n_exc
    if n_up < 1:
        return None
    return TailAnchor(level=float(theta_t0 + report.u_star), rate=n_up / report.n,
                      xi=report.xi_pwm, sigma=report.sigma_pwm)


def effective_exceedances(residuals, T, u_star, t0, h, extra_weights=None):
    w = gaussian_weights(T, t0, h)
    if extra_weights is not None:
        w = w * extra_weights
    return float(w[np.abs(residuals) > u_star].sum())


def anchor_exceedances(Y, T, per_t, i, h, extra_weights=None):
    """Kernel-weighted count of ``|Y - median|`` beyond the per-T threshold at grid index ``i``."""
    w = gaussian_weights(T, per_t.grid[i], h)
    if extra_weights is not None:
        w = w * extra_weights
    dev = np.abs(np.asarray(Y) - per_t.pilot_median[i])
    return float(w[dev > per_t.threshold[i]].sum())


def hybrid_return_level(theta_t0, residuals, T, alpha, t0, h, anchor, extra_weights=None):
    """Return level of ``Y(t0)`` exceeded with probability ``alpha``.

    Empirical mode when ``alpha * n_eff(t0) >= 1``: ``theta_W(t0)`` plus the
    weighted empirical ``(1 - alpha)``-quantile of the residuals. Otherwise
    GPD extrapolation from ``anchor``; NaN if there is none.

    Returns
    -------
    value, mode
    """
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
    r = np.asarray(residuals, dtype=np.float64)
    w = gaussian_weights(T, t0, h)
    if extra_weights is not None:
        w = w * extra_weights
    if _empirical_mode(alpha, effective_n(w)):
        return theta_t0 + weighted_quantile(WeightedSample(r, w), 1.0 - alpha), EMPIRICAL
    if anchor is None or not (np.isfinite(anchor.xi) and np.isfinite(anchor.sigma)):
        return np.nan, GPD
    return float(anchor.quantile(alpha)), GPD


def conditional_shortfall(q, xi, sigma, threshold):
    """GPD mean beyond ``q``: ``q + (sigma + xi (q - threshold)) / (1 - xi)``; NaN if ``xi >= 1``."""
    if not (np.isfinite(q) and np.isfinite(xi) and np.isfinite(sigma)) or xi >= 1.0:
        return np.nan
    return float(q + (sigma + xi * (q - threshold)) / (1.0 - xi))


def causal_tail_effect(q_curve, grid):
    """Finite-difference ``dQ/dt``: central inside, one-sided at the two ends."""
    q = np.asarray(q_curve, dtype=np.float64)
    g = np.asarray(grid, dtype=np.float64)
    if g.shape[0] < 2 or q.shape != g.shape:
        raise ValueError("need matching q_curve and grid with at least two points")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    out = np.empty_like(q)
    out[1:-1] = (q[2:] - q[:-2]) / (g[2:] - g[:-2])
    out[0] = (q[1] - q[0]) / (g[1] - g[0])
    out[-1] = (q[-1] - q[-2]) / (g[-1] - g[-2])
    return out


def tail_functionals(theta_w, residuals, Y, T, per_t, report, alpha, h=None, extra_weights=None,
                     anchor="per_t"):
    """Assemble every functional on ``theta_w.grid``.

    Parameters
    ----------
    theta_w : ADRFCurve
        Robust core fit.
    residuals : array
        ``Y - theta_W(T)``, the residuals the TailReport was built from.
    per_t : PerTTailCurve
        Per-treatment shapes on the same grid.
    report : TailReport
    anchor : {"per_t", "global"}
        Where the GPD branch and the shortfall anchor their tail. ``per_t``
        uses the per-treatment threshold and exceedance rate; a point that
        is refused, or whose threshold has fewer than 15 effective
        exceedances, falls back to the global fit. ``global`` extrapolates
        from ``theta_W(t) + u*`` with the global upper rate and the per-T shape
        and scale, falling back to the global fit where fewer than 15
        effective exceedances of ``u*`` sit nearby.
    extra_weights : array, optional
        Stabilized GPS weights; they enter every kernel-weighted quantity.
    """
    if anchor not in ("per_t", "global"):
        raise ValueError(f"anchor must be 'per_t' or 'global', got {anchor!r}")
    grid = np.asarray(theta_w.grid, dtype=np.float64)
    theta = np.asarray(theta_w.theta, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    h = silverman_bandwidth(T) if h is None else h
    k = grid.shape[0]
    q = np.full(k, np.nan)
    s = np.full(k, np.nan)
    mode = np.empty(k, dtype=object)
    has_global = report is not None and not report.refused

    for i, t0 in enumerate(grid):
        glob = global_anchor(theta[i], report)
        loc = local_anchor(Y, T, per_t, i, h, extra_weights)
        if loc is not None and anchor == "per_t":
            if anchor_exceedances(Y, T, per_t, i, h, extra_weights) < MIN_EFF_EXCEEDANCES:
                loc = None
        elif loc is not None and glob is not None:
            if effective_exceedances(r, T, report.u_star, t0, h, extra_weights) < MIN_EFF_EXCEEDANCES:
                loc = None
            else:
                loc = TailAnchor(level=glob.level, rate=glob.rate, xi=loc.xi, sigma=loc.sigma)
        use = loc if loc is not None else glob
        q[i], mode[i] = hybrid_return_level(theta[i], r, T, alpha, t0, h, use, extra_weights)
        if use is not None:
            s[i] = conditional_shortfall(q[i], use.xi, use.sigma, use.level)

    # a GPD-mode point with no usable tail fit refuses the whole curve
    refused = bool(np.any(np.isnan(q)))
    cte = np.full(k, np.nan) if refused or k < 2 else causal_tail_effect(q, grid)
    if has_global:
        fits = sign_conditional_fits(r, T, report.u_star, grid, h, extra_weights)
        ey = recover_mean_adrf(theta, fits)
    else:
        ey = theta.copy()
    return TailFunctionals(grid=grid, alpha=float(alpha), theta_w=theta, q_alpha=q,
                           q_mode=mode.astype(str), s_alpha=s, cte=cte, ey_recovered=ey,
                           refused=refused)
