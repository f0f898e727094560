"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
NumPy fallback in ``_pure``. Set ``COPULA_EM_BACKEND=python`` to force the
fallback.
"""
import os

import numpy as np
from scipy.special import ndtri

from . import _pure

CLAMP = 1e-12
Z_CLAMP = float(-ndtri(CLAMP))
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

if os.environ.get("COPULA_EM_BACKEND", "").lower() == "python":
    _impl = _pure
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _pure

BACKEND = "python" if _impl is _pure else "cython"

mixture_eval = _impl.mixture_eval
mixture_quantile = _impl.mixture_quantile
quadrant_counts = _impl.quadrant_counts


def mixture_grad(x, centers, sigma, a, b, kern=None):
    """Weighted gradient over the centers of an equal-weight mixture.

    Returns ``sum_i a[i] * dz_i/dc_k + b[i] * dlogpdf_i/dc_k`` for every
    center ``k``, where ``z = Phi^{-1}(F(x))``. Uses
    ``dF/dc_k = -resp_k * f`` so no per-component special functions are
    evaluated beyond the one pass of ``mixture_eval``.
    """
    kern = kern or _impl
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    _, z, logpdf, resp = kern.mixture_eval(x, centers, sigma, CLAMP, True)
    return grad_from_resp(x, centers, sigma, z, logpdf, resp, a, b)


def grad_from_resp(x, centers, sigma, z, logpdf, resp, a, b):
    """Gradient assembly from precomputed ``mixture_eval`` outputs."""
    # f / phi(z): how fast the normal score moves per unit of cdf
    ratio = np.exp(logpdf + 0.5 * z * z + LOG_SQRT_2PI)
    ratio[np.abs(z) >= Z_CLAMP] = 0.0  # z is flat where the cdf is clamped
    b_s = np.asarray(b, dtype=np.float64) / (sigma * sigma)
    return resp.T @ (b_s * x - np.asarray(a, dtype=np.float64) * ratio) - centers * (resp.T @ b_s)


def backends():
    """Map of backend name to kernel module, for parity tests and benchmarks."""
    out = {"python": _pure}
    try:
        from . import _kernels
    except ImportError:
        return out
    out["cython"] = _kernels
    return out
