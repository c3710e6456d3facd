"""Kernel weights, bandwidths and weighted order statistics."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightedSample:
    """Values paired with non-negative weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if values.shape != weights.shape or values.ndim != 1:
            raise ValueError("values and weights must be 1-d arrays of equal length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.values.shape[0]

    def subset(self, idx):
        return WeightedSample(self.values[idx], self.weights[idx])


def silverman_bandwidth(t):
    """Silverman's rule of thumb, ``1.06 * sd(t) * n**(-1/5)`` (sd with n-1)."""
    t = np.asarray(t, dtype=np.float64)
    n = t.shape[0]
    if n < 2:
        raise ValueError("need at least two observations for a bandwidth")
    sd = np.std(t, ddof=1)
    if not sd > 0:
        raise ValueError("zero spread: bandwidth undefined for constant input")
    return 1.06 * sd * n ** (-0.2)


def gaussian_weights(t, t0, h):
    """Untruncated Gaussian kernel weights ``exp(-((t - t0)/h)**2 / 2)``."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    z = (np.asarray(t, dtype=np.float64) - t0) / h
    return np.exp(-0.5 * z * z)


def effective_n(weights):
    return float(np.sum(weights)) if len(weights) else 0.0


def sorted_cumulative(ws):
    """Sort a weighted sample ascending; return values, weights, cumulative weights."""
    order = np.argsort(ws.values, kind="stable")
    v = ws.values[order]
    w = ws.weights[order]
    return v, w, np.cumsum(w)


def weighted_quantile(ws, tau):
    """Left-continuous weighted quantile.

    Returns the smallest value whose normalized cumulative weight reaches
    ``tau``. With equal weights this is the order statistic of rank
    ``ceil(tau * n)``.
    """
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if len(ws) == 0:
        raise ValueError("empty sample")
    v, _, cum = sorted_cumulative(ws)
    total = cum[-1]
    if not total > 0:
        raise ValueError("zero total weight")
    j = int(np.searchsorted(cum, tau * total, side="left"))
    return float(v[min(j, v.shape[0] - 1)])


def weighted_median(values, weights):
    return weighted_quantile(WeightedSample(values, weights), 0.5)


def weighted_mad(values, weights):
    """Weighted median absolute deviation about the weighted median (unscaled)."""
    med = weighted_median(values, weights)
    return weighted_median(np.abs(np.asarray(values) - med), weights)
