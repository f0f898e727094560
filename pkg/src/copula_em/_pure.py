"""Pure NumPy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or when ``COPULA_EM_BACKEND=python`` is set.
"""
import numpy as np
from scipy.special import ndtr, ndtri

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
QUANTILE_GRID = 512
QUANTILE_SPAN = 12.0
NEWTON_ACCEPT = 1e-7  # in units of the bandwidth
_CHUNK = 2048


def _standardize(x, centers, sigma):
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return (x[:, None] - centers[None, :]) / sigma


def mixture_eval(x, centers, sigma, clamp, want_resp=False):
    """Clamped cdf, gaussianized value and log density of an equal-weight mixture.

    With ``want_resp`` also returns the ``(n, g)`` matrix of component
    responsibilities ``phi(u_k) / sum_l phi(u_l)``.
    """
    u = _standardize(x, centers, sigma)
    g = u.shape[1]
    cdf = ndtr(u).mean(axis=1)
    upper = cdf > 0.5
    z = np.empty_like(cdf)
    z[~upper] = ndtri(np.maximum(cdf[~upper], clamp))
    if upper.any():
        surv = ndtr(-u[upper]).mean(axis=1)
        z[upper] = -ndtri(np.maximum(surv, clamp))
    q = -0.5 * u * u
    qmax = q.max(axis=1)
    e = np.exp(q - qmax[:, None])
    s = e.sum(axis=1)
    logpdf = qmax + np.log(s) - np.log(g * sigma) - LOG_SQRT_2PI
    out = (np.clip(cdf, clamp, 1.0 - clamp), z, logpdf)
    if want_resp:
        return out + (e / s[:, None],)
    return out


def _cdf_pdf(x, centers, sigma):
    u = _standardize(x, centers, sigma)
    g = u.shape[1]
    return ndtr(u).mean(axis=1), np.exp(-0.5 * u * u - LOG_SQRT_2PI).sum(axis=1) / (g * sigma)


def _hermite_start(u, a, b, fa, fb, da, db):
    h = fb - fa
    t = (u - fa) / h
    lin = a + t * (b - a)
    t2, t3 = t * t, t * t * t
    with np.errstate(divide="ignore", invalid="ignore"):
        x = ((2 * t3 - 3 * t2 + 1) * a + (t3 - 2 * t2 + t) * h / da
             + (-2 * t3 + 3 * t2) * b + (t3 - t2) * h / db)
    ok = (da > 0) & (db > 0) & (x > a) & (x < b)
    return np.where(ok, x, lin)


def mixture_quantile(u, centers, sigma):
    """Invert the mixture cdf: grid bracketing, Hermite start, safeguarded Newton."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    lo = centers.min() - QUANTILE_SPAN * sigma
    hi = centers.max() + QUANTILE_SPAN * sigma
    accept = NEWTON_ACCEPT * sigma
    grid = np.linspace(lo, hi, QUANTILE_GRID)
    fgrid, dgrid = _cdf_pdf(grid, centers, sigma)
    out = np.empty_like(u)
    below = u <= fgrid[0]
    above = u >= fgrid[-1]
    out[below] = lo
    out[above] = hi
    inner = ~(below | above)
    if not inner.any():
        return out
    ui = u[inner]
    idx = np.searchsorted(fgrid, ui, side="left")
    a, b = grid[idx - 1], grid[idx]
    x = _hermite_start(ui, a, b, fgrid[idx - 1], fgrid[idx], dgrid[idx - 1], dgrid[idx])
    active = np.ones(ui.shape, dtype=bool)
    for _ in range(100):
        if not active.any():
            break
        xa = x[active]
        f, dens = _cdf_pdf(xa, centers, sigma)
        r = f - ui[active]
        aa, bb = a[active], b[active]
        bb = np.where(r > 0, xa, bb)
        aa = np.where(r > 0, aa, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - r / dens
        bad = ~((xn > aa) & (xn < bb))
        xn = np.where(bad, 0.5 * (aa + bb), xn)
        done = (r == 0) | (~bad & (np.abs(xn - xa) <= accept)) | (xn == xa)
        xn = np.where(r == 0, xa, xn)
        x[active], a[active], b[active] = xn, aa, bb
        sub = np.flatnonzero(active)
        active[sub[done]] = False
    out[inner] = x
    return out


def quadrant_counts(ax, ay, px, py):
    """Per anchor: #points with x <= ax, with y <= ay, and with both."""
    ax = np.asarray(ax, dtype=np.float64)
    ay = np.asarray(ay, dtype=np.float64)
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    cx = np.searchsorted(np.sort(px), ax, side="right").astype(np.int64)
    cy = np.searchsorted(np.sort(py), ay, side="right").astype(np.int64)
    cxy = np.empty(ax.size, dtype=np.int64)
    for s in range(0, ax.size, _CHUNK):
        sl = slice(s, s + _CHUNK)
        inside = (px[None, :] <= ax[sl, None]) & (py[None, :] <= ay[sl, None])
        cxy[sl] = inside.sum(axis=1)
    return cx, cy, cxy
