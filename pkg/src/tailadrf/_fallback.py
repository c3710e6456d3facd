"""Pure numpy implementations of the hot kernels.

Signatures and numerics mirror ``_native.pyx``; ``_backend`` picks one of
the two at import time.
"""
import numpy as np

_CHUNK = 512


def nw_predict(x_train, y_train, x_test, h):
    """Nadaraya-Watson regression with a product Gaussian kernel.

    Parameters
    ----------
    x_train : (m, d) array
    y_train : (m, k) array
        Several targets are smoothed with the same weights.
    x_test : (q, d) array
    h : (d,) array of per-coordinate bandwidths

    Returns
    -------
    (q, k) array of fitted values.
    """
    x_train = np.ascontiguousarray(x_train, dtype=np.float64)
    y_train = np.ascontiguousarray(y_train, dtype=np.float64)
    x_test = np.ascontiguousarray(x_test, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    xs = x_train / h
    out = np.empty((x_test.shape[0], y_train.shape[1]))
    for start in range(0, x_test.shape[0], _CHUNK):
        q = x_test[start:start + _CHUNK] / h
        d2 = np.zeros((q.shape[0], xs.shape[0]))
        for c in range(xs.shape[1]):
            diff = q[:, c:c + 1] - xs[None, :, c]
            d2 += diff * diff
        e = -0.5 * d2
        e -= e.max(axis=1, keepdims=True)
        k = np.exp(e)
        out[start:start + _CHUNK] = (k @ y_train) / k.sum(axis=1, keepdims=True)
    return out


def pinball_objective(y, x, kw, a, b, tau, delta):
    u = y - a - b * x
    au = np.abs(u)
    hub = np.where(au <= delta, u * u / (2.0 * delta), au - 0.5 * delta)
    return float(np.sum(kw * (0.5 * hub + (tau - 0.5) * u)))


def pinball_irls(y, x, kw, tau, delta, a, b, max_iter, tol):
    """Local-linear smoothed-pinball fit by majorize-minimize IRLS.

    Minimizes ``sum kw * rho(y - a - b*x)`` where rho is the check loss with
    its kink replaced by a quadratic of half-width ``delta``. Each step
    solves the weighted least-squares problem of the quadratic majorizer,
    so the objective never increases.

    Returns
    -------
    a, b, n_iter, converged, trace
        ``trace`` holds the objective before the first step and after each.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    kw = np.asarray(kw, dtype=np.float64)
    shift = tau - 0.5
    skw = shift * kw.sum()
    skwx = shift * (kw * x).sum()
    trace = [pinball_objective(y, x, kw, a, b, tau, delta)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = y - a - b * x
        w = kw / (2.0 * np.maximum(np.abs(u), delta))
        s0 = w.sum()
        wx = w * x
        s1 = wx.sum()
        s2 = (wx * x).sum()
        t0 = (w * y).sum() + skw
        t1 = (wx * y).sum() + skwx
        det = s0 * s2 - s1 * s1
        if not det > 1e-12 * s0 * s2:
            raise np.linalg.LinAlgError("singular weighted design in pinball fit")
        a_new = (s2 * t0 - s1 * t1) / det
        b_new = (s0 * t1 - s1 * t0) / det
        step = abs(a_new - a) + abs(b_new - b)
        a, b = a_new, b_new
        trace.append(pinball_objective(y, x, kw, a, b, tau, delta))
        if step <= tol * (1.0 + abs(a) + abs(b)):
            converged = True
            break
    return a, b, it, converged, np.asarray(trace)


def tail_log_moments(values, weights, kappas, min_weight):
    """Weighted log-spacing moments of the top-kappa fraction.

    ``values`` must be sorted ascending (``weights`` aligned). For each
    kappa the anchor is the weighted (1 - kappa)-quantile value (first value
    whose cumulative weight reaches the level) and the top set is every
    observation ranked after it.

    Returns
    -------
    m1, m2, n_top, anchor : arrays over kappas
        ``m1``/``m2`` are NaN when the anchor is not positive or the top set
        carries no weight; ``n_top`` counts top observations whose weight
        exceeds ``min_weight``.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    kappas = np.asarray(kappas, dtype=np.float64)
    nk = kappas.shape[0]
    m1 = np.full(nk, np.nan)
    m2 = np.full(nk, np.nan)
    n_top = np.zeros(nk, dtype=np.int64)
    anchor = np.full(nk, np.nan)
    cum = np.cumsum(weights)
    total = cum[-1] if cum.size else 0.0
    if not total > 0:
        return m1, m2, n_top, anchor
    n = values.shape[0]
    for i in range(nk):
        j = int(np.searchsorted(cum, (1.0 - kappas[i]) * total, side="left"))
        j = min(j, n - 1)
        anchor[i] = values[j]
        w = weights[j + 1:]
        n_top[i] = int(np.count_nonzero(w > min_weight))
        sw = w.sum()
        if not (values[j] > 0 and sw > 0):
            continue
        lsp = np.log(values[j + 1:]) - np.log(values[j])
        wl = w * lsp
        m1[i] = wl.sum() / sw
        m2[i] = (wl * lsp).sum() / sw
    return m1, m2, n_top, anchor
