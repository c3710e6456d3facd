"""Comparison estimators for the tail functionals.

Kernel-weighted local-linear quantile regression (solved by a smoothed
pinball IRLS), a Pickands-type tail-shape proxy built from three QR fits,
an averaged-quantile shortfall, and a residual-PWM peaks-over-threshold
return level.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import _backend
from .errors import InvalidFitError, SingularDesignError
from .kernels import WeightedSample, gaussian_weights, silverman_bandwidth, weighted_quantile
from .threshold import pwm_fit, return_level, weighted_pwm_fit

QR_MAX_ITER = 100
QR_TOL = 1e-9
DELTA_REL = 1e-4
_NEGLIGIBLE = 1e-12


@dataclass(frozen=True)
class QRCurve:
    grid: np.ndarray
    tau: float
    q_hat: np.ndarray


def _check_tau(tau):
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def local_quantile_fit(y, t, t0, h, tau, delta=None, extra_weights=None):
    """Intercept of the kernel-weighted local-linear pinball fit at ``t0``.

    ``delta`` is the half-width of the quadratic smoothing of the check-loss
    kink (default ``1e-4 * sd(y)``). The solve starts from the weighted
    least-squares line shifted by the weighted ``tau``-quantile of its
    residuals. At extreme ``tau`` the IRLS can stall before its iteration
    cap; the fit is then finished by an exact linear-programming solve of
    the unsmoothed check loss.
    """
    _check_tau(tau)
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    kw = gaussian_weights(t, t0, h)
    if extra_weights is not None:
        kw = kw * extra_weights
    band = kw > _NEGLIGIBLE
    if np.count_nonzero(band) < 3:
        raise SingularDesignError(f"degenerate band at t0={t0:.4g}")
    kw, x, yb = kw[band], t[band] - t0, y[band]
    if delta is None:
        sd = float(np.std(y))
        delta = DELTA_REL * sd if sd > 0 else DELTA_REL
    a0, b0 = _wls_line(x, yb, kw, t0)
    a0 += weighted_quantile(WeightedSample(yb - a0 - b0 * x, kw), tau)
    try:
        a, _, _, converged, _ = _backend.pinball_irls(yb, x, kw, float(tau), float(delta), a0, b0,
                                                      QR_MAX_ITER, QR_TOL)
    except np.linalg.LinAlgError as err:
        raise SingularDesignError(f"degenerate band at t0={t0:.4g}: {err}") from None
    if not converged:
        a = _lp_quantile_line(yb, x, kw, tau, t0)
    return float(a)


def _lp_quantile_line(y, x, w, tau, t0):
    # dual of the weighted check-loss LP: max y.d  s.t.  sum d = sum x d = 0,
    # -(1-tau) w <= d <= tau w; the line coefficients are minus the multipliers
    A = np.vstack([np.ones_like(x), x])
    bounds = np.column_stack([-(1.0 - tau) * w, tau * w])
    res = linprog(-y, A_eq=A, b_eq=np.zeros(2), bounds=bounds, method="highs")
    if res.status != 0:
        raise SingularDesignError(f"quantile LP failed at t0={t0:.4g}: {res.message}")
    return -res.eqlin.marginals[0]


def _wls_line(x, y, w, t0):
    s0, s1, s2 = w.sum(), (w * x).sum(), (w * x * x).sum()
    det = s0 * s2 - s1 * s1
    if not det > 1e-12 * s0 * s2:
        raise SingularDesignError(f"degenerate band at t0={t0:.4g}")
    t_0, t_1 = (w * y).sum(), (w * x * y).sum()
    return (s2 * t_0 - s1 * t_1) / det, (s0 * t_1 - s1 * t_0) / det


def qr_quantile_curve(sample, grid, tau, h=None, extra_weights=None):
    """Local-linear quantile regression of ``Y`` on ``T`` at each grid point."""
    _check_tau(tau)
    h = silverman_bandwidth(sample.T) if h is None else h
    grid = np.asarray(grid, dtype=np.float64)
    q = np.array([local_quantile_fit(sample.Y, sample.T, t0, h, tau, extra_weights=extra_weights)
                  for t0 in grid])
    return QRCurve(grid=grid, tau=float(tau), q_hat=q)


def pickands_proxy(q1, q2, q4):
    """``log((q1 - q2)/(q2 - q4)) / log 2`` from quantiles at levels ``1-a``, ``1-2a``, ``1-4a``.

    NaN where either gap is not positive.
    """
    q1, q2, q4 = (np.asarray(v, dtype=np.float64) for v in (q1, q2, q4))
    g1 = q1 - q2
    g2 = q2 - q4
    ok = (g1 > 0) & (g2 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.log(g1 / g2) / np.log(2.0)
    return np.where(ok, xi, np.nan)


def qr_xi_proxy(sample, grid, alpha_base=0.05, h=None):
    """Per-grid tail shape read off three QR curves at ``1 - alpha_base * {1, 2, 4}``."""
    if not 0 < 4 * alpha_base < 1:
        raise ValueError("alpha_base must lie in (0, 0.25)")
    qs = [qr_quantile_curve(sample, grid, 1.0 - m * alpha_base, h).q_hat for m in (1, 2, 4)]
    return pickands_proxy(*qs)


def qr_avg_levels(alpha, M):
    m = np.arange(1, M + 1)
    return 1.0 - alpha * (m - 0.5) / M


def qr_avg_shortfall(sample, grid, alpha, M=6, h=None):
    """Mean of ``M`` QR curves at midpoint levels ``1 - alpha (m - 1/2)/M``."""
    if M < 1:
        raise ValueError("M must be positive")
    curves = [qr_quantile_curve(sample, grid, tau, h).q_hat for tau in qr_avg_levels(alpha, M)]
    return np.mean(curves, axis=0)


@dataclass(frozen=True)
class ResidualPWMCurve:
    grid: np.ndarray
    q_hat: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray


def residual_pwm_fit(residuals, T, grid, u_star, h=None):
    """Per-grid weighted PWM on ``|r| > u*`` exceedances.

    Grid points whose weighted fit is invalid use the global unweighted fit.

    Returns
    -------
    xi, sigma : arrays over the grid
    n_exc : int
        Exceedances of ``|r|``.
    n_upper : int
        Exceedances on the upper side, ``r > u*``.
    """
    r = np.asarray(residuals, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    h = silverman_bandwidth(T) if h is None else h
    a = np.abs(r)
    exc_mask = a > u_star
    e = a[exc_mask] - u_star
    xi_g, sig_g = pwm_fit(e)
    grid = np.asarray(grid, dtype=np.float64)
    xi = np.empty_like(grid)
    sig = np.empty_like(grid)
    for k, t0 in enumerate(grid):
        w = gaussian_weights(T[exc_mask], t0, h)
        try:
            xi[k], sig[k] = weighted_pwm_fit(e, w)
        except InvalidFitError:
            xi[k], sig[k] = xi_g, sig_g
    return xi, sig, int(e.shape[0]), int(np.count_nonzero(r > u_star))


def residual_pwm_return_level(theta_w, residuals, T, grid, alpha, u_star, h=None):
    """POT return level with per-grid residual-PWM shapes.

    ``theta_W(t) + return_level(u*, xi(t), sigma(t), n_up, n, alpha)`` where
    ``n_up`` counts upper-side exceedances, so that the level targets
    ``P(Y(t) > q) = alpha``. Shapes and scales use both sides.
    """
    r = np.asarray(residuals, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    theta = np.asarray(theta_w.at(grid) if hasattr(theta_w, "at") else theta_w, dtype=np.float64)
    xi, sig, _, n_up = residual_pwm_fit(r, T, grid, u_star, h)
    if n_up < 1:
        raise InvalidFitError("no residual exceeds u* on the upper side")
    n = r.shape[0]
    q = np.array([theta[k] + return_level(u_star, xi[k], sig[k], n_up, n, alpha)
                  for k in range(grid.shape[0])])
    return ResidualPWMCurve(grid=grid, q_hat=q, xi=xi, sigma=sig)
