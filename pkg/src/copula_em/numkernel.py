"""Normal special functions and small symmetric-matrix linear algebra.

Everything here is pure: random streams are passed in explicitly, so callers
that run in parallel simply own disjoint ``numpy.random.Generator`` objects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .errors import DomainError, NumericalError

SQRT_2PI = np.sqrt(2.0 * np.pi)

# smallest admissible Cholesky pivot (squared diagonal of the factor)
PIVOT_TOL = 1e-12


def std_normal_cdf(x):
    """Standard normal distribution function, elementwise."""
    return special.ndtr(x)


def std_normal_pdf(x):
    """Standard normal density, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return out[()] if out.ndim == 0 else out


def std_normal_quantile(u):
    """Inverse of :func:`std_normal_cdf`.

    Raises :class:`DomainError` unless every ``u`` lies strictly inside
    (0, 1). Callers are expected to clamp probabilities themselves; a 0 or 1
    arriving here means an upstream bug.
    """
    arr = np.asarray(u, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("normal quantile needs probabilities strictly inside (0, 1)")
    return special.ndtri(u)


@dataclass(frozen=True)
class IndexPartition:
    """Split of the coordinates ``0..p-1`` into observed and missing indices."""

    obs: tuple
    mis: tuple
    p: int

    def __post_init__(self):
        obs, mis = tuple(sorted(self.obs)), tuple(sorted(self.mis))
        if set(obs) & set(mis):
            raise DomainError("observed and missing index sets overlap")
        if set(obs) | set(mis) != set(range(self.p)):
            raise DomainError("observed and missing indices must cover 0..p-1")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "mis", mis)

    @classmethod
    def from_mask(cls, observed) -> "IndexPartition":
        """Build from a boolean vector that is True where a value is observed."""
        observed = np.asarray(observed, dtype=bool)
        idx = np.arange(observed.size)
        return cls(tuple(idx[observed].tolist()), tuple(idx[~observed].tolist()), observed.size)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.p, dtype=bool)
        m[list(self.obs)] = True
        return m


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises :class:`NumericalError` if the factorization fails or the smallest
    pivot is not above ``PIVOT_TOL``.
    """
    a = np.asarray(a, dtype=float)
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"matrix is not positive definite: {exc}") from None
    if a.size and np.min(np.diag(low)) ** 2 <= PIVOT_TOL:
        raise NumericalError("matrix is numerically singular (Cholesky pivot below 1e-12)")
    return low


def min_pivot(a: np.ndarray) -> float:
    """Smallest squared Cholesky diagonal, or -inf if ``a`` is not PD."""
    try:
        low = np.linalg.cholesky(np.asarray(a, dtype=float))
    except np.linalg.LinAlgError:
        return -np.inf
    return float(np.min(np.diag(low)) ** 2)


def schur_conditional(sigma, part: IndexPartition, z_obs):
    """Mean and covariance of ``z[mis] | z[obs] = z_obs`` for ``z ~ N(0, sigma)``.

    Returns ``(mu, sigma_prime)`` with ``mu = S_mo S_oo^{-1} z_obs`` and
    ``sigma_prime = S_mm - S_mo S_oo^{-1} S_om``.
    """
    sigma = np.asarray(sigma, dtype=float)
    z_obs = np.asarray(z_obs, dtype=float)
    obs, mis = list(part.obs), list(part.mis)
    if z_obs.shape != (len(obs),):
        raise DomainError(f"expected {len(obs)} observed values, got shape {z_obs.shape}")
    if not obs:
        return np.zeros(len(mis)), sigma[np.ix_(mis, mis)].copy()
    s_oo = sigma[np.ix_(obs, obs)]
    s_om = sigma[np.ix_(obs, mis)]
    low = cholesky(s_oo)
    # A = S_mo S_oo^{-1}, computed as (S_oo^{-1} S_om)^T
    a_t = linalg.cho_solve((low, True), s_om)
    mu = a_t.T @ z_obs
    sigma_prime = sigma[np.ix_(mis, mis)] - s_om.T @ a_t
    sigma_prime = 0.5 * (sigma_prime + sigma_prime.T)
    return mu, sigma_prime


def mvn_sample(mu, sigma, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` rows from ``N(mu, sigma)``; returns an ``(m, d)`` array."""
    mu = np.asarray(mu, dtype=float)
    low = cholesky(sigma)
    eps = rng.standard_normal((m, mu.size))
    return mu + eps @ low.T


def correlation_normalize(s) -> np.ndarray:
    """Rescale a PSD matrix to unit diagonal: ``P S P`` with ``P = diag(S)^{-1/2}``."""
    s = np.asarray(s, dtype=float)
    d = np.diag(s)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise NumericalError("correlation normalization needs a strictly positive diagonal")
    scale = 1.0 / np.sqrt(d)
    out = s * scale[:, None] * scale[None, :]
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out
