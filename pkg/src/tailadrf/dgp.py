"""Synthetic data-generating processes for the verification panel.

All panel DGPs share one frame: ``X ~ N(0, I_5)``, ``T ~ U[-2, 2]``
independent of ``X``, ``Y = theta(T) + 0.5 * X[:, 1] + eps``, with
``theta(t) = sin(pi t / 2) + t / 2``. The base noise is ``N(0, 1)`` and a
DGP-specific contamination replaces it with probability ``p``.

Noise draws consume the same random numbers whatever the treatment value,
so interventional oracles evaluated at different ``t`` share common random
numbers and the oracle curves are smooth in ``t``.
"""
from dataclasses import dataclass

import numpy as np

from ._seeding import rng_for

D_COVARIATES = 5

PANEL_DGPS = (
    "clean",
    "sinusoidal_pareto",
    "sinusoidal_asymmetric",
    "sinusoidal_heavytail",
    "sinusoidal_two_paretos",
    "regime_switch",
    "pareto_plus_gaussian",
    "heteroskedastic",
    "t_localised",
    "multi_context",
)
DGP_NAMES = PANEL_DGPS + ("confounded",)
CONTAMINATION_LEVELS = (0.0, 0.05, 0.10, 0.20)

HEAVY_DGPS = (
    "sinusoidal_pareto",
    "sinusoidal_heavytail",
    "sinusoidal_two_paretos",
    "regime_switch",
    "pareto_plus_gaussian",
    "multi_context",
)


@dataclass(frozen=True)
class DGPSpec:
    name: str
    contamination_p: float = 0.0
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise ValueError(f"unknown DGP {self.name!r}; expected one of {DGP_NAMES}")
        if not 0.0 <= self.contamination_p <= 1.0:
            raise ValueError("contamination_p must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class Sample:
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        T = np.asarray(self.T, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.shape[0] != T.shape[0] or T.shape != Y.shape:
            raise ValueError("X, T and Y must have matching lengths")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(T)) and np.all(np.isfinite(Y))):
            raise ValueError("sample contains missing or non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self):
        return self.T.shape[0]


@dataclass(frozen=True)
class OracleCurves:
    grid: np.ndarray
    theta: np.ndarray
    q_alpha: np.ndarray
    s_alpha: np.ndarray
    xi_true: np.ndarray
    alpha: float


def structural_theta(t):
    t = np.asarray(t, dtype=np.float64)
    return np.sin(np.pi * t / 2.0) + t / 2.0


def covariate_effect(X):
    return 0.5 * X[:, 1]


class _Draws:
    """Every uniform/normal a noise law may need, drawn up front."""

    def __init__(self, rng, n):
        self.z = rng.standard_normal(n)
        self.z2 = rng.standard_normal(n)
        self.u_contam = rng.random(n)
        self.u_pareto = 1.0 - rng.random(n)  # (0, 1]
        self.u_chi = 1.0 - rng.random(n)
        self.u_mix = rng.random(n)
        self.sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)


def _pareto(u, alpha):
    return u ** (-1.0 / alpha)


def _noise(name, p, T, X, dr):
    base = dr.z.copy()
    if name == "heteroskedastic":
        return (1.0 + np.abs(T)) * dr.z
    if name == "clean":
        return base

    p_eff = np.full(T.shape, p)
    if name == "sinusoidal_pareto":
        contam = dr.sign * _pareto(dr.u_pareto, 1.5)
    elif name == "sinusoidal_asymmetric":
        contam = 6.0 + dr.z2
    elif name == "sinusoidal_heavytail":
        # Student-t(2): z / sqrt(chi2_2 / 2) with chi2_2 = -2 log U
        contam = dr.z2 / np.sqrt(-np.log(dr.u_chi))
    elif name == "sinusoidal_two_paretos":
        contam = dr.sign * np.where(T < 0, _pareto(dr.u_pareto, 1.5), _pareto(dr.u_pareto, 3.0))
    elif name == "regime_switch":
        contam = dr.sign * _pareto(dr.u_pareto, 1.5)
        p_eff = np.where(X[:, 2] > 0, min(2.0 * p, 1.0), 0.0)
    elif name == "pareto_plus_gaussian":
        contam = np.where(dr.u_mix < 0.5, dr.sign * _pareto(dr.u_pareto, 1.5), 5.0 * dr.z2)
    elif name == "t_localised":
        contam = dr.sign * _pareto(dr.u_pareto, 1.5)
        p_eff = np.where(np.abs(T - 1.0) < 0.3, p, 0.0)
    elif name == "multi_context":
        contam = dr.sign * np.where(X[:, 1] > 0, _pareto(dr.u_pareto, 1.5), _pareto(dr.u_pareto, 3.0))
    elif name == "confounded":
        contam = dr.sign * _pareto(dr.u_pareto, 1.5)
        p_eff = np.where(X[:, 0] < 0, p, 0.0)
    else:  # pragma: no cover - guarded by DGPSpec
        raise ValueError(name)
    return np.where(dr.u_contam < p_eff, contam, base)


def _outcome(name, p, T, X, dr):
    return structural_theta(T) + covariate_effect(X) + _noise(name, p, T, X, dr)


def generate(spec):
    """Draw a Sample; identical specs give bit-identical samples."""
    rng = rng_for(spec.seed, "generate", spec.name, spec.contamination_p, spec.n)
    n = spec.n
    X = rng.standard_normal((n, D_COVARIATES))
    if spec.name == "confounded":
        T = 0.6 * X[:, 0] + rng.standard_normal(n)
    else:
        T = rng.uniform(-2.0, 2.0, n)
    dr = _Draws(rng, n)
    Y = _outcome(spec.name, spec.contamination_p, T, X, dr)
    return Sample(X=X, T=T, Y=Y)


def xi_true(name, p, t):
    """Tail shape of the interventional law of Y(t).

    A mixture's index is the largest index among its components; without
    contamination every DGP is Gaussian-tailed (0).
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    if p <= 0 or name in ("clean", "heteroskedastic", "sinusoidal_asymmetric"):
        return out
    if name == "sinusoidal_heavytail":
        return out + 0.5
    if name == "sinusoidal_two_paretos":
        return np.where(t < 0, 2.0 / 3.0, 1.0 / 3.0)
    if name == "t_localised":
        return np.where(np.abs(t - 1.0) < 0.3, 2.0 / 3.0, 0.0)
    return out + 2.0 / 3.0


def oracle_curves(spec, grid, alpha, n_oracle=100_000, seed=None):
    """Interventional oracle: force ``T = t`` and draw ``n_oracle`` outcomes.

    ``theta`` is the empirical mean, ``q_alpha`` the empirical upper
    ``(1 - alpha)``-quantile and ``s_alpha`` the mean beyond it.
    """
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
    if n_oracle < 1000:
        raise ValueError("n_oracle must be at least 1000")
    grid = np.asarray(grid, dtype=np.float64)
    rng = rng_for(spec.seed if seed is None else seed, "oracle", spec.name, spec.contamination_p)
    X = rng.standard_normal((n_oracle, D_COVARIATES))
    dr = _Draws(rng, n_oracle)
    theta = np.empty_like(grid)
    q = np.empty_like(grid)
    s = np.empty_like(grid)
    for k, t in enumerate(grid):
        y = _outcome(spec.name, spec.contamination_p, np.full(n_oracle, t), X, dr)
        theta[k] = y.mean()
        q[k] = np.quantile(y, 1.0 - alpha)
        s[k] = y[y > q[k]].mean()
    return OracleCurves(
        grid=grid, theta=theta, q_alpha=q, s_alpha=s,
        xi_true=xi_true(spec.name, spec.contamination_p, grid), alpha=alpha,
    )


def regime_label(xi, tol=0.05):
    """Frechet above ``tol``, Weibull below ``-tol``, Gumbel in between."""
    if xi is None or not np.isfinite(xi):
        return "refused"
    if xi > tol:
        return "frechet"
    if xi < -tol:
        return "weibull"
    return "gumbel"


def truth_regime(name, p, grid):
    return regime_label(float(np.median(xi_true(name, p, grid))))
