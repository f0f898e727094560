"""Monte Carlo ECM for the Gaussian copula with mixture marginals.

One outer iteration, starting from ``(theta_t, sigma_t)``:

1. closed-form E-step: per-row conditional second moments ``V_l`` of the
   gaussianized data, averaged into ``S``;
2. ``sigma_{t+1}`` = ``S`` rescaled to unit diagonal;
3. ``M`` conditional completions of every incomplete row under
   ``(theta_t, sigma_t)``;
4. ``theta_{t+1}`` maximizes the Monte Carlo objective
   ``sum_i w_i [-1/2 z_i^T (K - I) z_i + sum_j log f_j(x_ij)]`` with
   ``K = sigma_{t+1}^{-1}``.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from . import kernels
from . import numkernel as nk
from .copula import CopulaModel, z_to_data
from .data import IncompleteDataset
from .errors import ConfigurationError, NumericalError
from .marginals import CLAMP, MixtureMarginal, gaussianize, init_from_observed

log = logging.getLogger(__name__)

PD_REPAIR_PIVOT = 1e-10
PD_REPAIR_SHRINK = 0.999
PD_REPAIR_MAX = 100


@dataclass(frozen=True)
class ThetaOptConfig:
    """Inner optimizer for the marginal update.

    method: ``"lbfgs"`` (scipy L-BFGS-B) or ``"gradient"`` (ascent with
    Armijo backtracking). Both work on the objective divided by the total
    row weight, so ``gtol`` is per row.
    """

    method: str = "lbfgs"
    max_steps: int = 200
    gtol: float = 1e-6


@dataclass(frozen=True)
class EcmConfig:
    g: int = 15
    n_max: int = 25
    eps_converged: float = 1e-5
    m_small: int = 20
    m_large: int = 1000
    n_small: int = 20
    n_late: int = 5
    master_seed: int = 0
    theta_opt: ThetaOptConfig = field(default_factory=ThetaOptConfig)

    def __post_init__(self):
        for name in ("g", "n_max", "m_small", "m_large", "n_small", "n_late"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if not self.eps_converged > 0:
            raise ConfigurationError("eps_converged must be positive")
        if self.theta_opt.method not in ("lbfgs", "gradient"):
            raise ConfigurationError(f"unknown theta optimizer {self.theta_opt.method!r}")

    def mc_size(self, iteration: int) -> int:
        return self.m_small if iteration < self.n_small else self.m_large


@dataclass
class EStepStatistic:
    """Mean conditional second moment ``S`` and, optionally, the per-row ``V_l``."""

    mean: np.ndarray
    per_row: list | None = None


@dataclass
class EcmTrace:
    iterations: list = field(default_factory=list)
    converged: bool = False

    def record(self, **row):
        self.iterations.append(row)

    def __len__(self):
        return len(self.iterations)

    @property
    def final_eps(self) -> float:
        return self.iterations[-1]["eps"] if self.iterations else float("nan")

    def to_csv(self, path_or_buf=None):
        """Columns: iteration, m, eps, eps_sigma, eps_theta, objective, repaired, sigma_<j>_<k>."""
        if path_or_buf is None:
            buf = io.StringIO()
            self.to_csv(buf)
            return buf.getvalue()
        if isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__"):
            with open(path_or_buf, "w", newline="") as fh:
                return self.to_csv(fh)
        w = csv.writer(path_or_buf, lineterminator="\n")
        if not self.iterations:
            w.writerow(["iteration", "m", "eps", "eps_sigma", "eps_theta", "objective", "repaired"])
            return None
        p = self.iterations[0]["sigma"].shape[0]
        sig_cols = [f"sigma_{j}_{k}" for j in range(p) for k in range(p)]
        w.writerow(["iteration", "m", "eps", "eps_sigma", "eps_theta", "objective", "repaired"] + sig_cols)
        for r in self.iterations:
            w.writerow([r["iteration"], r["m"], repr(r["eps"]), repr(r["eps_sigma"]),
                        repr(r["eps_theta"]), repr(r["objective"]), int(r["repaired"])]
                       + [repr(float(v)) for v in r["sigma"].ravel()])
        return None


# ---------------------------------------------------------------------------
# E-step and sigma update


def e_step_v(model: CopulaModel, part: nk.IndexPartition, x_obs) -> np.ndarray:
    """Conditional second moment ``E[z z^T | x_obs]`` for one row, in original column order."""
    x_obs = np.asarray(x_obs, dtype=float)
    z_obs = np.array([gaussianize(model.marginals[j], v) for j, v in zip(part.obs, x_obs)])
    return _v_from_z(model.sigma, part, z_obs)


def _v_from_z(sigma, part, z_obs):
    obs, mis = list(part.obs), list(part.mis)
    mu, sp = nk.schur_conditional(sigma, part, z_obs)
    v = np.empty((part.p, part.p))
    v[np.ix_(obs, obs)] = np.outer(z_obs, z_obs)
    v[np.ix_(obs, mis)] = np.outer(z_obs, mu)
    v[np.ix_(mis, obs)] = np.outer(mu, z_obs)
    v[np.ix_(mis, mis)] = sp + np.outer(mu, mu)
    return v


def _patterns(observed: np.ndarray):
    """Distinct missingness patterns in a fixed order, with row indices for each."""
    pats, inv = np.unique(observed, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    return [(pats[k], np.flatnonzero(inv == k)) for k in range(pats.shape[0])]


def e_step_z(sigma, z, observed=None, per_row: bool = False) -> EStepStatistic:
    """E-step on already gaussianized data ``z`` (NaN = missing).

    Rows sharing a missingness pattern share ``mu = A z_obs`` and ``sigma'``,
    so each pattern is handled with one Schur complement.
    """
    sigma = np.asarray(sigma, dtype=float)
    z = np.asarray(z, dtype=float)
    observed = ~np.isnan(z) if observed is None else np.asarray(observed, dtype=bool)
    n, p = z.shape
    total = np.zeros((p, p))
    rows = [None] * n if per_row else None
    for pat, idx in _patterns(observed):
        part = nk.IndexPartition.from_mask(pat)
        obs, mis = list(part.obs), list(part.mis)
        zo = z[np.ix_(idx, obs)]
        if not obs:
            sp, mu = sigma.copy(), np.zeros((idx.size, p))
        elif not mis:
            sp, mu = np.zeros((0, 0)), np.zeros((idx.size, 0))
        else:
            low = nk.cholesky(sigma[np.ix_(obs, obs)])
            a_t = linalg.cho_solve((low, True), sigma[np.ix_(obs, mis)])
            sp = sigma[np.ix_(mis, mis)] - sigma[np.ix_(mis, obs)] @ a_t
            mu = zo @ a_t
        block = np.zeros((p, p))
        block[np.ix_(obs, obs)] = zo.T @ zo
        block[np.ix_(obs, mis)] = zo.T @ mu
        block[np.ix_(mis, obs)] = mu.T @ zo
        block[np.ix_(mis, mis)] = idx.size * sp + mu.T @ mu
        total += block
        if per_row:
            for r, i in enumerate(idx):
                v = np.empty((p, p))
                v[np.ix_(obs, obs)] = np.outer(zo[r], zo[r])
                v[np.ix_(obs, mis)] = np.outer(zo[r], mu[r])
                v[np.ix_(mis, obs)] = np.outer(mu[r], zo[r])
                v[np.ix_(mis, mis)] = sp + np.outer(mu[r], mu[r])
                rows[i] = v
    s = total / n
    return EStepStatistic(0.5 * (s + s.T), rows)


def e_step(model: CopulaModel, data: IncompleteDataset, per_row: bool = False) -> EStepStatistic:
    return e_step_z(model.sigma, model.gaussianize(data.values), data.observed, per_row)


def sigma_update(stat) -> tuple[np.ndarray, bool]:
    """Correlation matrix from ``S``; returns ``(sigma, repaired)``.

    If the result is numerically singular its off-diagonal part is shrunk
    by 0.999 until the smallest Cholesky pivot exceeds 1e-10.
    """
    s = stat.mean if isinstance(stat, EStepStatistic) else np.asarray(stat, dtype=float)
    sigma = nk.correlation_normalize(s)
    if nk.min_pivot(sigma) >= PD_REPAIR_PIVOT:
        return sigma, False
    eye = np.eye(sigma.shape[0])
    for _ in range(PD_REPAIR_MAX):
        sigma = eye + PD_REPAIR_SHRINK * (sigma - eye)
        if nk.min_pivot(sigma) >= PD_REPAIR_PIVOT:
            break
    else:
        raise NumericalError("correlation update could not be repaired to positive definite")
    warnings.warn("correlation update was not positive definite; off-diagonals shrunk", RuntimeWarning)
    return sigma, True


def sigma_em(z, observed=None, eps: float = 1e-5, n_max: int = 1000, sigma0=None):
    """Correlation-only EM on gaussianized data with fixed marginals.

    Iterates E-step and unit-diagonal rescaling until the elementwise L1
    change drops below ``eps``. Returns ``(sigma, n_iterations)``.
    """
    z = np.asarray(z, dtype=float)
    observed = ~np.isnan(z) if observed is None else observed
    sigma = np.eye(z.shape[1]) if sigma0 is None else np.asarray(sigma0, dtype=float)
    for it in range(1, n_max + 1):
        new, _ = sigma_update(e_step_z(sigma, z, observed))
        delta = float(np.abs(new - sigma).sum())
        sigma = new
        if delta < eps:
            return sigma, it
    return sigma, n_max


# ---------------------------------------------------------------------------
# Monte Carlo completion and marginal update


@dataclass(frozen=True, eq=False)
class CompletedSample:
    """Completed rows ``x`` (``n x p``) with weights ``w``.

    A fully observed row enters once with weight 1, which equals its ``M``
    identical copies at weight ``1/M``; every conditional draw of an
    incomplete row carries weight ``1/M``.
    """

    x: np.ndarray
    w: np.ndarray

    @classmethod
    def from_copies(cls, rows, m: int) -> "CompletedSample":
        """Build from ``M`` stacked copies per observation, each of weight ``1/M``."""
        x = np.asarray(rows, dtype=float)
        return cls(x, np.full(x.shape[0], 1.0 / m))


def draw_completed(model: CopulaModel, data: IncompleteDataset, m: int,
                   master_seed: int, iteration: int) -> CompletedSample:
    """Complete every incomplete row ``m`` times under ``model``.

    Row ``l`` draws from its own stream seeded by
    ``(master_seed, iteration, l)``, so results do not depend on how rows
    are scheduled.
    """
    x, observed = data.values, data.observed
    z = model.gaussianize(x)
    complete = observed.all(axis=1)
    parts = [x[complete]]
    weights = [np.ones(int(complete.sum()))]
    for pat, idx in _patterns(observed):
        if pat.all():
            continue
        part = nk.IndexPartition.from_mask(pat)
        obs, mis = list(part.obs), list(part.mis)
        if obs:
            low = nk.cholesky(model.sigma[np.ix_(obs, obs)])
            a_t = linalg.cho_solve((low, True), model.sigma[np.ix_(obs, mis)])
            sp = model.sigma[np.ix_(mis, mis)] - model.sigma[np.ix_(mis, obs)] @ a_t
            mus = z[np.ix_(idx, obs)] @ a_t
        else:
            sp = model.sigma.copy()
            mus = np.zeros((idx.size, len(mis)))
        chol = nk.cholesky(0.5 * (sp + sp.T))
        zmis = np.empty((idx.size, m, len(mis)))
        for r, i in enumerate(idx):
            rng = np.random.default_rng([master_seed, iteration, int(i)])
            zmis[r] = mus[r] + rng.standard_normal((m, len(mis))) @ chol.T
        block = np.repeat(x[idx], m, axis=0)
        block[:, mis] = z_to_data(model, mis, zmis.reshape(-1, len(mis)))
        parts.append(block)
        weights.append(np.full(block.shape[0], 1.0 / m))
    return CompletedSample(np.vstack(parts), np.concatenate(weights))


class _ThetaProblem:
    """MC objective over all centers, with per-column value deduplication."""

    def __init__(self, marginals, k_next, sample: CompletedSample):
        self.bw = [m.bandwidth for m in marginals]
        self.gs = [m.g for m in marginals]
        self.offsets = np.concatenate([[0], np.cumsum(self.gs)])
        self.a = np.asarray(k_next, dtype=float) - np.eye(len(marginals))
        self.w = sample.w
        self.total_w = float(sample.w.sum())
        self.cols = []
        for j in range(len(marginals)):
            vals, inv = np.unique(sample.x[:, j], return_inverse=True)
            inv = np.asarray(inv).ravel()
            wsum = np.bincount(inv, weights=sample.w, minlength=vals.size)
            self.cols.append((vals, inv, wsum))

    def split(self, flat):
        return [flat[self.offsets[j]:self.offsets[j + 1]] for j in range(len(self.gs))]

    def _z(self, flat, want_resp):
        evals, marg = [], 0.0
        for (vals, inv, wsum), c, bw in zip(self.cols, self.split(flat), self.bw):
            out = kernels.mixture_eval(vals, c, bw, CLAMP, want_resp)
            evals.append(out)
            marg += float(wsum @ out[2])
        z = np.column_stack([out[1][inv] for out, (_, inv, _) in zip(evals, self.cols)])
        return evals, z, marg

    def value(self, flat) -> float:
        _, z, marg = self._z(flat, False)
        quad = np.einsum("ij,ij->i", z @ self.a, z)
        return -0.5 * float(self.w @ quad) + marg

    def value_and_grad(self, flat):
        evals, z, marg = self._z(flat, True)
        az = z @ self.a
        val = -0.5 * float(self.w @ np.einsum("ij,ij->i", az, z)) + marg
        grads = []
        for j, ((vals, inv, wsum), c, bw) in enumerate(zip(self.cols, self.split(flat), self.bw)):
            _, zu, lp, resp = evals[j]
            # d/dz_j of -1/2 z^T A z is -(A z)_j; pooled over rows sharing a value
            coef = np.bincount(inv, weights=-self.w * az[:, j], minlength=vals.size)
            grads.append(kernels.grad_from_resp(vals, c, bw, zu, lp, resp, coef, wsum))
        return val, np.concatenate(grads)


def _flat(marginals):
    return np.concatenate([m.centers for m in marginals])


def theta_objective(marginals, k_next, sample: CompletedSample) -> float:
    """Monte Carlo estimate of the expected complete-data log likelihood in ``theta``."""
    return _ThetaProblem(marginals, k_next, sample).value(_flat(marginals))


def theta_objective_grad(marginals, k_next, sample: CompletedSample) -> list:
    """Gradient of :func:`theta_objective`, one array of length ``g_j`` per column."""
    prob = _ThetaProblem(marginals, k_next, sample)
    return prob.split(prob.value_and_grad(_flat(marginals))[1])


def _ascend_gradient(prob, x0, opt: ThetaOptConfig):
    x = x0.copy()
    f, g = prob.value_and_grad(x)
    f, g = f / prob.total_w, g / prob.total_w
    step = 1.0
    for _ in range(opt.max_steps):
        if np.max(np.abs(g)) <= opt.gtol:
            break
        gg = float(g @ g)
        while True:
            cand = x + step * g
            fc, gc = prob.value_and_grad(cand)
            fc, gc = fc / prob.total_w, gc / prob.total_w
            if fc >= f + 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-16:
                return x
        x, f, g = cand, fc, gc
        step *= 2.0
    return x


def _ascend_lbfgs(prob, x0, opt: ThetaOptConfig):
    def fun(x):
        v, g = prob.value_and_grad(x)
        return -v / prob.total_w, -g / prob.total_w

    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": opt.max_steps, "gtol": opt.gtol})
    return res.x


def theta_update(marginals, k_next, sample: CompletedSample,
                 opt: ThetaOptConfig | None = None) -> tuple:
    """Maximize the Monte Carlo objective over all mixture centers.

    Never returns a point with a lower objective than the start; centers are
    sorted afterwards (the objective is invariant to their order).
    """
    return _theta_update(marginals, k_next, sample, opt)[0]


def _theta_update(marginals, k_next, sample, opt):
    opt = opt or ThetaOptConfig()
    prob = _ThetaProblem(marginals, k_next, sample)
    x0 = _flat(marginals)
    f0 = prob.value(x0)
    x = _ascend_lbfgs(prob, x0, opt) if opt.method == "lbfgs" else _ascend_gradient(prob, x0, opt)
    f1 = prob.value(x)
    if not np.isfinite(f1) or f1 < f0:
        if not np.isfinite(f1) or f1 < f0 - 1e-9 * max(1.0, abs(f0)):
            warnings.warn("marginal update did not improve the objective; keeping start", RuntimeWarning)
        x, f1 = x0, f0
    return tuple(m.with_centers(c) for m, c in zip(marginals, prob.split(x))), f1


# ---------------------------------------------------------------------------
# driver


def initial_model(data: IncompleteDataset, g: int) -> CopulaModel:
    """Identity correlation and ecdf-fitted mixture marginals."""
    margs = []
    for j in range(data.p):
        obs = data.column_observed(j)
        if obs.size < g:
            raise ConfigurationError(
                f"column {data.columns[j]!r} has {obs.size} observed values, fewer than g={g}")
        margs.append(init_from_observed(obs, g))
    return CopulaModel(np.eye(data.p), margs)


def run_ecm(data: IncompleteDataset, cfg: EcmConfig | None = None,
            init: CopulaModel | None = None, fix_marginals: bool = False):
    """Fit the copula model to incomplete data. Returns ``(model, trace)``.

    The run stops after ``cfg.n_max`` iterations, or once the elementwise L1
    change in sigma falls below ``cfg.eps_converged`` during the large-``M``
    phase. With ``fix_marginals`` only sigma is updated (no sampling) and the
    convergence test applies from the first iteration.
    """
    cfg = cfg or EcmConfig()
    model = init if init is not None else initial_model(data, cfg.g)
    if model.p != data.p:
        raise ConfigurationError(f"model has {model.p} columns, data has {data.p}")
    trace = EcmTrace()
    for it in range(cfg.n_max):
        stat = e_step(model, data)
        sigma_next, repaired = sigma_update(stat)
        m = 0 if fix_marginals else cfg.mc_size(it)
        if fix_marginals:
            margs, objective = model.marginals, float("nan")
        else:
            sample = draw_completed(model, data, m, cfg.master_seed, it)
            k_next = CopulaModel(sigma_next, model.marginals).precision
            margs, objective = _theta_update(model.marginals, k_next, sample, cfg.theta_opt)
            if not np.isfinite(objective):
                raise NumericalError(f"non-finite objective at iteration {it}")
        eps_sigma = float(np.abs(sigma_next - model.sigma).sum())
        eps_theta = float(np.abs(_flat(margs) - _flat(model.marginals)).sum())
        model = CopulaModel(sigma_next, margs)
        trace.record(iteration=it, m=m, eps=eps_sigma + eps_theta, eps_sigma=eps_sigma,
                     eps_theta=eps_theta, objective=objective, repaired=repaired,
                     sigma=model.sigma.copy())
        log.debug("iteration %d: M=%d eps_sigma=%.3g eps_theta=%.3g", it, m, eps_sigma, eps_theta)
        late = fix_marginals or it >= cfg.n_small
        if late and eps_sigma < cfg.eps_converged:
            trace.converged = True
            break
    return model, trace
