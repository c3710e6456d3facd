"""Seed sub-streams.

Every stochastic step (data draw, oracle draw, fold split, bootstrap,
half-sample) pulls its generator from ``rng_for(seed, *stream)`` so that
streams are independent and reproducible without sharing state.
"""
import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """64-bit finalizer (SplitMix64)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _to_int(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK
    if isinstance(part, float):
        return int(np.float64(part).view(np.uint64))
    # strings: stable FNV-1a, independent of PYTHONHASHSEED
    h = 0xCBF29CE484222325
    for byte in str(part).encode():
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_seed(seed, *stream):
    """Mix a master seed with stream identifiers into a new 64-bit seed."""
    x = splitmix64(_to_int(seed))
    for part in stream:
        x = splitmix64(x ^ _to_int(part))
    return x


def rng_for(seed, *stream):
    return np.random.default_rng(derive_seed(seed, *stream))
