"""Equal-weight Gaussian mixture marginals with a shared bandwidth.

A marginal with centers ``c_1 <= ... <= c_g`` and bandwidth ``s`` has cdf
``F(x) = mean_k Phi((x - c_k) / s)``. Only the centers are free parameters;
the bandwidth is fixed at initialization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError
from .kernels import CLAMP  # probabilities are clamped to [CLAMP, 1 - CLAMP] before Phi^{-1}


@dataclass(frozen=True, eq=False)
class MixtureMarginal:
    """Semiparametric marginal: ``g`` sorted centers and one bandwidth."""

    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        centers = np.sort(np.asarray(self.centers, dtype=float).ravel())
        if centers.size < 1:
            raise ConfigurationError("a mixture marginal needs at least one center")
        if not np.all(np.isfinite(centers)):
            raise ConfigurationError("mixture centers must be finite")
        if not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise ConfigurationError(f"bandwidth must be positive, got {self.bandwidth!r}")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def g(self) -> int:
        return self.centers.size

    def with_centers(self, centers) -> "MixtureMarginal":
        return MixtureMarginal(centers, self.bandwidth)

    def __eq__(self, other):
        if not isinstance(other, MixtureMarginal):
            return NotImplemented
        return self.bandwidth == other.bandwidth and np.array_equal(self.centers, other.centers)

    def to_dict(self) -> dict:
        return {"g": self.g, "centers": self.centers.tolist(), "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureMarginal":
        centers = d["centers"]
        if "g" in d and int(d["g"]) != len(centers):
            raise ConfigurationError(f"marginal declares g={d['g']} but lists {len(centers)} centers")
        return cls(np.asarray(centers, dtype=float), float(d["bandwidth"]))


def _eval(m: MixtureMarginal, x):
    x = np.asarray(x, dtype=float)
    cdf, z, logpdf = kernels.mixture_eval(x.ravel(), m.centers, m.bandwidth, CLAMP)
    return x.shape, cdf, z, logpdf


def _shaped(shape, arr):
    return arr.reshape(shape) if shape else arr[0]


def mix_cdf(m: MixtureMarginal, x):
    """Mixture cdf, clamped to ``[CLAMP, 1 - CLAMP]``."""
    shape, cdf, _, _ = _eval(m, x)
    return _shaped(shape, cdf)


def mix_logpdf(m: MixtureMarginal, x):
    shape, _, _, logpdf = _eval(m, x)
    return _shaped(shape, logpdf)


def mix_pdf(m: MixtureMarginal, x):
    return np.exp(mix_logpdf(m, x))


def gaussianize(m: MixtureMarginal, x):
    """Map data to the normal scale: ``Phi^{-1}(F(x))``.

    The upper half is computed from the survival function so both tails keep
    full relative precision.
    """
    shape, _, z, _ = _eval(m, x)
    return _shaped(shape, z)


def mix_quantile(m: MixtureMarginal, u):
    """Inverse of :func:`mix_cdf` for ``u`` strictly inside (0, 1)."""
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0.0) & (u < 1.0)):
        raise DomainError("mixture quantile needs probabilities strictly inside (0, 1)")
    out = kernels.mixture_quantile(u.ravel(), m.centers, m.bandwidth)
    return _shaped(u.shape, out)


def gaussianize_grad(m: MixtureMarginal, x: float) -> np.ndarray:
    """Gradient of :func:`gaussianize` at a scalar ``x`` with respect to each center."""
    return kernels.mixture_grad(np.array([float(x)]), m.centers, m.bandwidth, np.ones(1), np.zeros(1))


def logpdf_grad(m: MixtureMarginal, x: float) -> np.ndarray:
    """Gradient of ``log mix_pdf`` at a scalar ``x`` with respect to each center."""
    return kernels.mixture_grad(np.array([float(x)]), m.centers, m.bandwidth, np.zeros(1), np.ones(1))


def percentile_points(values, levels) -> np.ndarray:
    """Linearly interpolated percentile estimator on the ``i/(N+1)`` grid.

    ``values`` must be sorted. Levels at or below ``1/(N+1)`` give the
    minimum, levels above ``N/(N+1)`` give the maximum.
    """
    y = np.asarray(values, dtype=float)
    n = y.size
    if n == 0:
        raise ConfigurationError("percentile estimator needs at least one value")
    u = np.asarray(levels, dtype=float)
    grid = np.arange(1, n + 1) / (n + 1.0)
    # branch (i/(N+1), (i+1)/(N+1)]: i = number of grid points strictly below u
    i = np.searchsorted(grid, u, side="left")
    i = np.clip(i, 1, max(n - 1, 1))
    if n == 1:
        out = np.full(u.shape, y[0])
    else:
        lo = i / (n + 1.0)
        out = (u - lo) / (1.0 / (n + 1.0)) * (y[i] - y[i - 1]) + y[i - 1]
    out = np.where(u <= grid[0], y[0], out)
    out = np.where(u > grid[-1], y[-1], out)
    return out


def silverman_bandwidth(observed, g: int) -> float:
    """``0.9 * min(sd, IQR/1.34) * g^(-1/5)`` with a floor for degenerate samples."""
    x = np.asarray(observed, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    bw = 0.9 * spread * g ** (-0.2)
    floor = 1e-6 * (1.0 + abs(float(x.max() - x.min())))
    return max(bw, floor)


def init_from_observed(observed, g: int) -> MixtureMarginal:
    """Start values fitted to the observed ecdf.

    Centers are the ecdf percentiles at levels ``(k - 1/2)/g``; the bandwidth
    is the rule-of-thumb of :func:`silverman_bandwidth` with ``g`` in place
    of the sample size.
    """
    if g < 1:
        raise ConfigurationError(f"g must be at least 1, got {g}")
    x = np.sort(np.asarray(observed, dtype=float))
    x = x[np.isfinite(x)]
    if x.size < g:
        raise ConfigurationError(f"need at least g={g} observed values, got {x.size}")
    levels = (np.arange(1, g + 1) - 0.5) / g
    return MixtureMarginal(percentile_points(x, levels), silverman_bandwidth(x, g))
