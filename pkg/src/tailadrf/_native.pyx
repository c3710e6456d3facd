# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()


def nw_predict(x_train, y_train, x_test, h):
    cdef double[:, ::1] xtr = np.ascontiguousarray(x_train, dtype=np.float64)
    cdef double[:, ::1] ytr = np.ascontiguousarray(y_train, dtype=np.float64)
    cdef double[:, ::1] xte = np.ascontiguousarray(x_test, dtype=np.float64)
    cdef double[::1] inv_h = 1.0 / np.asarray(h, dtype=np.float64)
    cdef Py_ssize_t m = xtr.shape[0], d = xtr.shape[1], k = ytr.shape[1]
    cdef Py_ssize_t q = xte.shape[0]
    cdef Py_ssize_t i, j, c, l
    cdef double emax, diff, s, den
    out_arr = np.empty((q, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] e = np.empty(m, dtype=np.float64)
    cdef double[::1] acc = np.empty(k, dtype=np.float64)
    for i in range(q):
        emax = -1e308
        for j in range(m):
            s = 0.0
            for c in range(d):
                diff = (xte[i, c] - xtr[j, c]) * inv_h[c]
                s += diff * diff
            s = -0.5 * s
            e[j] = s
            if s > emax:
                emax = s
        den = 0.0
        for l in range(k):
            acc[l] = 0.0
        for j in range(m):
            s = exp(e[j] - emax)
            den += s
            for l in range(k):
                acc[l] += s * ytr[j, l]
        for l in range(k):
            out[i, l] = acc[l] / den
    return out_arr


cdef double _pinball_obj(double[::1] y, double[::1] x, double[::1] kw,
                         double a, double b, double tau, double delta) nogil:
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double u, au, hub, tot = 0.0
    for i in range(n):
        u = y[i] - a - b * x[i]
        au = fabs(u)
        if au <= delta:
            hub = u * u / (2.0 * delta)
        else:
            hub = au - 0.5 * delta
        tot += kw[i] * (0.5 * hub + (tau - 0.5) * u)
    return tot


def pinball_objective(y, x, kw, double a, double b, double tau, double delta):
    return _pinball_obj(np.ascontiguousarray(y, dtype=np.float64),
                        np.ascontiguousarray(x, dtype=np.float64),
                        np.ascontiguousarray(kw, dtype=np.float64),
                        a, b, tau, delta)


def pinball_irls(y, x, kw, double tau, double delta, double a, double b,
                 int max_iter, double tol):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] kv = np.ascontiguousarray(kw, dtype=np.float64)
    cdef Py_ssize_t i, n = yv.shape[0]
    cdef double shift = tau - 0.5
    cdef double skw = 0.0, skwx = 0.0
    cdef double u, w, s0, s1, s2, t0, t1, det, a_new, b_new, step, au
    cdef int it = 0
    cdef bint converged = False
    for i in range(n):
        skw += kv[i]
        skwx += kv[i] * xv[i]
    skw *= shift
    skwx *= shift
    trace = [_pinball_obj(yv, xv, kv, a, b, tau, delta)]
    for it in range(1, max_iter + 1):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        t0 = 0.0
        t1 = 0.0
        for i in range(n):
            u = yv[i] - a - b * xv[i]
            au = fabs(u)
            if au < delta:
                au = delta
            w = kv[i] / (2.0 * au)
            s0 += w
            s1 += w * xv[i]
            s2 += w * xv[i] * xv[i]
            t0 += w * yv[i]
            t1 += w * xv[i] * yv[i]
        t0 += skw
        t1 += skwx
        det = s0 * s2 - s1 * s1
        if not det > 1e-12 * s0 * s2:
            raise np.linalg.LinAlgError("singular weighted design in pinball fit")
        a_new = (s2 * t0 - s1 * t1) / det
        b_new = (s0 * t1 - s1 * t0) / det
        step = fabs(a_new - a) + fabs(b_new - b)
        a = a_new
        b = b_new
        trace.append(_pinball_obj(yv, xv, kv, a, b, tau, delta))
        if step <= tol * (1.0 + fabs(a) + fabs(b)):
            converged = True
            break
    return a, b, it, bool(converged), np.asarray(trace)


def tail_log_moments(values, weights, kappas, double min_weight):
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] kap = np.ascontiguousarray(kappas, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], nk = kap.shape[0]
    cdef Py_ssize_t i, j, r, lo, hi, mid
    cdef double total = 0.0, level, run, sw, s1, s2, la, lsp
    cdef long cnt
    m1_arr = np.full(nk, np.nan)
    m2_arr = np.full(nk, np.nan)
    ntop_arr = np.zeros(nk, dtype=np.int64)
    anchor_arr = np.full(nk, np.nan)
    cdef double[::1] m1 = m1_arr
    cdef double[::1] m2 = m2_arr
    cdef long long[::1] ntop = ntop_arr
    cdef double[::1] anchor = anchor_arr
    cdef double[::1] cum = np.empty(n, dtype=np.float64)
    for r in range(n):
        total += w[r]
        cum[r] = total
    if n == 0 or not total > 0:
        return m1_arr, m2_arr, ntop_arr, anchor_arr
    for i in range(nk):
        level = (1.0 - kap[i]) * total
        # first index with cum >= level (same as searchsorted side="left")
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) // 2
            if cum[mid] < level:
                lo = mid + 1
            else:
                hi = mid
        j = lo if lo < n else n - 1
        anchor[i] = v[j]
        cnt = 0
        sw = 0.0
        for r in range(j + 1, n):
            sw += w[r]
            if w[r] > min_weight:
                cnt += 1
        ntop[i] = cnt
        if not (v[j] > 0 and sw > 0):
            continue
        la = log(v[j])
        s1 = 0.0
        s2 = 0.0
        for r in range(j + 1, n):
            lsp = log(v[r]) - la
            s1 += w[r] * lsp
            s2 += w[r] * lsp * lsp
        m1[i] = s1 / sw
        m2[i] = s2 / sw
    return m1_arr, m2_arr, ntop_arr, anchor_arr
