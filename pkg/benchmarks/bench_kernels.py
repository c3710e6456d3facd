"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` wall time of each
backend, their ratio and the largest absolute disagreement of the outputs.
"""
import argparse
import timeit

import numpy as np

from tailadrf import _fallback

try:
    from tailadrf import _native
except ImportError:  # extension not built
    _native = None


def cases(rng):
    n = 2000
    X = rng.standard_normal((n, 5))
    Y = np.column_stack([X[:, 1] + rng.standard_normal(n), rng.standard_normal(n)])
    h = np.full(5, 0.6)
    yield "nw_predict (1333x5 -> 667)", lambda m: m.nw_predict(X[:1333], Y[:1333], X[1333:], h)

    t = rng.uniform(-2, 2, n)
    y = np.sin(t) + rng.standard_t(2, n)
    kw = np.exp(-0.5 * (t / 0.3) ** 2)
    q0 = float(np.quantile(y, 0.99))
    yield "pinball_irls (n=2000, tau=0.99)", lambda m: m.pinball_irls(y, t, kw, 0.99, 1e-4, q0, 0.0, 100, 1e-9)[:2]

    v = np.sort(np.abs(rng.standard_t(2, 20000)))
    w = rng.random(20000)
    kap = np.array([0.04, 0.06, 0.08, 0.10, 0.12, 0.15, 0.20])
    yield "tail_log_moments (n=20000, 7 kappas)", lambda m: m.tail_log_moments(v, w, kap, 1e-6)[:2]


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.atleast_1d(np.asarray(o, dtype=np.float64)).ravel() for o in out])
    return np.asarray(out, dtype=np.float64).ravel()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _native is None:
        print("compiled extension not available; only the fallback can be timed")
    rng = np.random.default_rng(20240611)
    print(f"{'kernel':40s} {'python ms':>10s} {'native ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, run in cases(rng):
        tp = min(timeit.repeat(lambda: run(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _native is None:
            print(f"{name:40s} {tp:10.2f} {'-':>10s} {'-':>8s} {'-':>11s}")
            continue
        tn = min(timeit.repeat(lambda: run(_native), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(_flat(run(_fallback)) - _flat(run(_native)))))
        print(f"{name:40s} {tp:10.2f} {tn:10.2f} {tp / tn:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
