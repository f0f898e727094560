"""Gaussian copula model with mixture marginals.

Joint log density, conditional laws of missing coordinates given observed
ones, conditional sampling, and the conditional-independence readout from
the precision matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from . import numkernel as nk
from .errors import ConfigurationError, DomainError
from .marginals import MixtureMarginal, gaussianize, mix_logpdf, mix_quantile


@dataclass(frozen=True, eq=False)
class CopulaModel:
    """Correlation matrix ``sigma`` plus one :class:`MixtureMarginal` per column."""

    sigma: np.ndarray
    marginals: tuple

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        p = len(self.marginals)
        if sigma.shape != (p, p):
            raise ConfigurationError(f"sigma has shape {sigma.shape}, expected ({p}, {p})")
        if not np.allclose(sigma, sigma.T, atol=1e-12, rtol=0):
            raise ConfigurationError("sigma must be symmetric")
        if np.max(np.abs(np.diag(sigma) - 1.0), initial=0.0) > 1e-10:
            raise ConfigurationError("sigma must have a unit diagonal")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "marginals", tuple(self.marginals))
        self.chol  # fail early on non-PD input

    @property
    def p(self) -> int:
        return len(self.marginals)

    @cached_property
    def chol(self) -> np.ndarray:
        return nk.cholesky(self.sigma)

    @cached_property
    def precision(self) -> np.ndarray:
        k = linalg.cho_solve((self.chol, True), np.eye(self.p))
        return 0.5 * (k + k.T)

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def with_sigma(self, sigma) -> "CopulaModel":
        return CopulaModel(sigma, self.marginals)

    def with_marginals(self, marginals) -> "CopulaModel":
        return CopulaModel(self.sigma, marginals)

    def gaussianize(self, x: np.ndarray) -> np.ndarray:
        """Column-wise normal scores of an ``(n, p)`` array; NaNs pass through."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.full(x.shape, np.nan)
        for j, m in enumerate(self.marginals):
            ok = ~np.isnan(x[:, j])
            if ok.any():
                z[ok, j] = gaussianize(m, x[ok, j])
        return z


@dataclass(frozen=True)
class ConditionalLaw:
    """Normal law of the gaussianized missing coordinates given the observed ones."""

    mu: np.ndarray
    sigma_prime: np.ndarray
    part: nk.IndexPartition


def log_density(model: CopulaModel, x) -> float:
    """Joint log density of a fully observed vector.

    ``-1/2 log|S| - 1/2 z^T (S^{-1} - I) z + sum_j log f_j(x_j)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.p,) or not np.all(np.isfinite(x)):
        raise DomainError("log_density needs a finite, fully observed vector of length p")
    z = np.array([gaussianize(m, xi) for m, xi in zip(model.marginals, x)])
    marg = sum(float(mix_logpdf(m, xi)) for m, xi in zip(model.marginals, x))
    quad = z @ (model.precision - np.eye(model.p)) @ z
    return -0.5 * model.logdet - 0.5 * float(quad) + marg


def conditional_law(model: CopulaModel, part: nk.IndexPartition, x_obs) -> ConditionalLaw:
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.shape != (len(part.obs),) or not np.all(np.isfinite(x_obs)):
        raise DomainError("x_obs must be finite and match the observed index set")
    z_obs = np.array([gaussianize(model.marginals[j], v) for j, v in zip(part.obs, x_obs)])
    mu, sp = nk.schur_conditional(model.sigma, part, z_obs)
    return ConditionalLaw(mu, sp, part)


def sample_conditional_z(law: ConditionalLaw, m: int, rng: np.random.Generator) -> np.ndarray:
    """Normal-scale draws for the missing coordinates, shape ``(m, |mis|)``."""
    if not law.part.mis:
        return np.empty((m, 0))
    return nk.mvn_sample(law.mu, law.sigma_prime, m, rng)


def sample_conditional(model: CopulaModel, law: ConditionalLaw, m: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` values of the missing coordinates given the observed ones.

    Returns an ``(m, |mis|)`` array on the data scale.
    """
    z = sample_conditional_z(law, m, rng)
    return z_to_data(model, law.part.mis, z)


def z_to_data(model: CopulaModel, cols, z: np.ndarray) -> np.ndarray:
    """Map normal scores back through each column's mixture quantile."""
    out = np.empty_like(z)
    for c, j in enumerate(cols):
        if z.shape[0]:
            u = nk.std_normal_cdf(z[:, c])
            # Phi saturates at 0/1 beyond ~|8.3|; the mixture bracket already ends there
            u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
            out[:, c] = mix_quantile(model.marginals[j], u)
    return out


def precision_zeros(model: CopulaModel, tol: float = 1e-8) -> set:
    """Off-diagonal pairs ``(j, k)``, ``j < k``, whose precision entry is within ``tol`` of 0."""
    k = model.precision
    return {(j, l) for j in range(model.p) for l in range(j + 1, model.p) if abs(k[j, l]) <= tol}


def impute(model: CopulaModel, x, m: int, seed: int = 0) -> np.ndarray:
    """``m`` conditional completions of every row of ``x`` (NaN = missing).

    Returns an ``(n, m, p)`` array; observed cells are copied. Row ``i``
    draws from the stream seeded by ``(seed, i)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.p:
        raise ConfigurationError(f"data has {x.shape[1]} columns, model has {model.p}")
    if m < 0:
        raise ConfigurationError("m must be nonnegative")
    out = np.repeat(x[:, None, :], m, axis=1)
    for i, row in enumerate(x):
        part = nk.IndexPartition.from_mask(~np.isnan(row))
        if not part.mis or m == 0:
            continue
        law = conditional_law(model, part, row[list(part.obs)])
        rng = np.random.default_rng([int(seed), i])
        out[i][:, list(part.mis)] = sample_conditional(model, law, m, rng)
    return out
