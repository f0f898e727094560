# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and semantics as ``_pure``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, log, sqrt, fabs
from scipy.special.cython_special cimport ndtri

cnp.import_array()

cdef double SQRT1_2 = 0.7071067811865476
cdef double LOG_SQRT_2PI = 0.9189385332046728
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef int QUANTILE_GRID = 512
cdef double QUANTILE_SPAN = 12.0
cdef double NEWTON_ACCEPT = 1e-7


cdef inline double _ndtr(double t) noexcept nogil:
    return 0.5 * erfc(-t * SQRT1_2)


cdef inline void _cdf_pdf(double x, const double[::1] c, double sigma,
                          double* cdf, double* pdf) noexcept nogil:
    cdef Py_ssize_t k, g = c.shape[0]
    cdef double u, sc = 0.0, sp = 0.0
    for k in range(g):
        u = (x - c[k]) / sigma
        sc += _ndtr(u)
        sp += exp(-0.5 * u * u)
    cdf[0] = sc / g
    pdf[0] = sp * INV_SQRT_2PI / (g * sigma)


def mixture_eval(x, centers, double sigma, double clamp, bint want_resp=False):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], g = c.shape[0], i, k
    cdf_a = np.empty(n)
    z_a = np.empty(n)
    lp_a = np.empty(n)
    resp_a = np.empty((n if want_resp else 0, g))
    cdef double[::1] cdf = cdf_a, z = z_a, lp = lp_a
    cdef double[:, ::1] resp = resp_a
    cdef double[::1] qbuf = np.empty(g)
    cdef double u, q, qmax, s, f, surv, tail
    cdef double lognorm = log(g * sigma) + LOG_SQRT_2PI
    with nogil:
        for i in range(n):
            f = 0.0
            surv = 0.0
            qmax = -1e308
            for k in range(g):
                u = (xv[i] - c[k]) / sigma
                # one erfc per component; take the accurate tail for each side
                if u > 0.0:
                    tail = 0.5 * erfc(u * SQRT1_2)
                    surv += tail
                    f += 1.0 - tail
                else:
                    tail = 0.5 * erfc(-u * SQRT1_2)
                    f += tail
                    surv += 1.0 - tail
                q = -0.5 * u * u
                qbuf[k] = q
                if q > qmax:
                    qmax = q
            f /= g
            surv /= g
            s = 0.0
            for k in range(g):
                qbuf[k] = exp(qbuf[k] - qmax)
                s += qbuf[k]
            if want_resp:
                for k in range(g):
                    resp[i, k] = qbuf[k] / s
            lp[i] = qmax + log(s) - lognorm
            if f > 0.5:
                z[i] = -ndtri(surv if surv > clamp else clamp)
            else:
                z[i] = ndtri(f if f > clamp else clamp)
            if f < clamp:
                f = clamp
            elif f > 1.0 - clamp:
                f = 1.0 - clamp
            cdf[i] = f
    if want_resp:
        return cdf_a, z_a, lp_a, resp_a
    return cdf_a, z_a, lp_a


cdef inline double _hermite_start(double u, double a, double b, double fa, double fb,
                                  double da, double db) noexcept nogil:
    # cubic Hermite interpolation of the inverse cdf on [fa, fb]; linear if unusable
    cdef double h = fb - fa, t = (u - fa) / h, t2, t3, x
    if da > 0.0 and db > 0.0:
        t2 = t * t
        t3 = t2 * t
        x = ((2.0 * t3 - 3.0 * t2 + 1.0) * a + (t3 - 2.0 * t2 + t) * h / da
             + (-2.0 * t3 + 3.0 * t2) * b + (t3 - t2) * h / db)
        if x > a and x < b:
            return x
    return a + t * (b - a)


def mixture_quantile(u, centers, double sigma):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0], i, j, it, lo_i, hi_i, mid
    cdef double lo = np.min(c) - QUANTILE_SPAN * sigma
    cdef double hi = np.max(c) + QUANTILE_SPAN * sigma
    cdef double accept = NEWTON_ACCEPT * sigma
    grid_a = np.linspace(lo, hi, QUANTILE_GRID)
    fgrid_a = np.empty(QUANTILE_GRID)
    dgrid_a = np.empty(QUANTILE_GRID)
    out_a = np.empty(n)
    cdef double[::1] grid = grid_a, fgrid = fgrid_a, dgrid = dgrid_a, out = out_a
    cdef double a, b, x, xn, f, dens, r
    with nogil:
        for j in range(QUANTILE_GRID):
            _cdf_pdf(grid[j], c, sigma, &fgrid[j], &dgrid[j])
        for i in range(n):
            if uv[i] <= fgrid[0]:
                out[i] = lo
                continue
            if uv[i] >= fgrid[QUANTILE_GRID - 1]:
                out[i] = hi
                continue
            # first grid index with fgrid >= u
            lo_i = 0
            hi_i = QUANTILE_GRID - 1
            while hi_i - lo_i > 1:
                mid = (lo_i + hi_i) // 2
                if fgrid[mid] >= uv[i]:
                    hi_i = mid
                else:
                    lo_i = mid
            a = grid[lo_i]
            b = grid[hi_i]
            x = _hermite_start(uv[i], a, b, fgrid[lo_i], fgrid[hi_i], dgrid[lo_i], dgrid[hi_i])
            for it in range(100):
                _cdf_pdf(x, c, sigma, &f, &dens)
                r = f - uv[i]
                if r == 0.0:
                    break
                if r > 0.0:
                    b = x
                else:
                    a = x
                if dens > 0.0:
                    xn = x - r / dens
                else:
                    xn = a - 1.0
                if not (xn > a and xn < b):
                    xn = 0.5 * (a + b)
                elif fabs(xn - x) <= accept:
                    # quadratic convergence: the next step would be below rounding
                    x = xn
                    break
                if xn == x:
                    break
                x = xn
            out[i] = x
    return out_a


def quadrant_counts(ax, ay, px, py):
    ax = np.ascontiguousarray(ax, dtype=np.float64)
    ay = np.ascontiguousarray(ay, dtype=np.float64)
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    sorted_y = np.sort(py)
    cx = np.searchsorted(np.sort(px), ax, side="right").astype(np.int64)
    cy_a = np.searchsorted(sorted_y, ay, side="right").astype(np.int64)
    rank_a = np.searchsorted(sorted_y, py, side="left").astype(np.int64)
    order_p_a = np.argsort(px, kind="stable").astype(np.int64)
    order_q_a = np.argsort(ax, kind="stable").astype(np.int64)
    cdef const cnp.int64_t[::1] cy = cy_a, rank = rank_a
    cdef const cnp.int64_t[::1] order_p = order_p_a, order_q = order_q_a
    cdef const double[::1] axv = ax, pxv = px
    cdef Py_ssize_t n = pxv.shape[0], m = axv.shape[0], i, j = 0, t, idx
    cdef cnp.int64_t acc
    tree_a = np.zeros(n + 1, dtype=np.int64)
    cxy_a = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] tree = tree_a, cxy = cxy_a
    with nogil:
        for i in range(m):
            idx = order_q[i]
            while j < n and pxv[order_p[j]] <= axv[idx]:
                t = rank[order_p[j]] + 1
                while t <= n:
                    tree[t] += 1
                    t += t & (-t)
                j += 1
            acc = 0
            t = cy[idx]
            while t > 0:
                acc += tree[t]
                t -= t & (-t)
            cxy[idx] = acc
    return cx, cy_a, cxy_a
