"""Simulation study: chi-square marginals, MCAR + MAR masking, three estimators.

Each repetition generates complete bivariate data with a Gaussian copula,
removes cells in two stages, and fits

* the copula ECM (mixture marginals learned jointly with the correlation),
* SCOPE (marginals frozen at the observed-data ecdf, correlation by EM),
* the gold standard (true marginals, correlation by EM).

Fitted joint laws are compared to the truth with the two-dimensional
two-sample KS statistic on ``n_ks`` draws each.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import special, stats

from . import kernels
from .copula import CopulaModel
from .data import IncompleteDataset
from .ecm import EcmConfig, run_ecm, sigma_em
from .errors import CopulaEMError, ConfigurationError, DomainError
from .marginals import CLAMP, MixtureMarginal, mix_cdf, percentile_points

log = logging.getLogger(__name__)

N_PRIME = 10_000
N_KS = 10_000

RESULT_COLUMNS = (
    "rep", "seed", "rho_scope", "rho_em", "rho_gold", "ks_scope", "ks_em", "ks_gold",
    "area_obs2", "sup_obs2", "sup_em2", "missing1", "missing2", "em_iterations",
)
SUMMARY_METRICS = ("rho_scope", "rho_em", "rho_gold", "ks_scope", "ks_em", "ks_gold",
                   "area_obs2", "sup_obs2", "sup_em2")


@dataclass(frozen=True)
class StudySetting:
    """One cell of the simulation design.

    ``p_mcar`` is the per-cell removal probability of the first stage;
    ``beta0``, ``beta1`` drive the logistic removal of column 2 given the
    normal score of column 1.
    """

    rho: float
    beta0: float
    beta1: float
    p_mcar: float = 0.1
    n_rows: int = 200
    marginal_dfs: tuple = (6, 7)
    reps: int = 100
    seed: int = 0
    n_ks: int = N_KS
    n_prime: int = N_PRIME
    scope_eps: float = 1e-5
    ecm: EcmConfig = field(default_factory=EcmConfig)

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ConfigurationError(f"rho must lie in (-1, 1), got {self.rho}")
        if not 0 <= self.p_mcar < 1:
            raise ConfigurationError(f"p_mcar must lie in [0, 1), got {self.p_mcar}")
        if len(self.marginal_dfs) != 2 or min(self.marginal_dfs) <= 0:
            raise ConfigurationError("marginal_dfs must be two positive degrees of freedom")
        for name in ("n_rows", "reps", "n_ks", "n_prime"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        object.__setattr__(self, "marginal_dfs", tuple(self.marginal_dfs))

    @property
    def label(self) -> str:
        return f"rho={self.rho:g},beta=({self.beta0:g},{self.beta1:g})"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["marginal_dfs"] = list(self.marginal_dfs)
        d["ecm"]["theta_opt"] = dict(d["ecm"]["theta_opt"])
        return d


def default_settings(**overrides) -> list:
    """The four designs: ``rho`` in {0.1, 0.5} times ``beta`` in {(-1, 1), (0, 2)}."""
    return [StudySetting(rho=r, beta0=b0, beta1=b1, **overrides)
            for r in (0.1, 0.5) for b0, b1 in ((-1.0, 1.0), (0.0, 2.0))]


# ---------------------------------------------------------------------------
# true marginals


def chi2_cdf(x, df):
    """Chi-square cdf (regularized lower incomplete gamma)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("chi-square cdf needs x >= 0")
    return special.gammainc(0.5 * df, 0.5 * x)


def chi2_quantile(u, df):
    """Inverse of :func:`chi2_cdf` for ``u`` strictly inside (0, 1)."""
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0) & (u < 1)):
        raise DomainError("chi-square quantile needs probabilities strictly inside (0, 1)")
    return 2.0 * special.gammaincinv(0.5 * df, u)


def chi2_score(x, df):
    """Normal score ``Phi^{-1}(F(x))`` under the true chi-square marginal."""
    x = np.asarray(x, dtype=float)
    hi = x > df  # survival side keeps precision in the upper tail
    p = np.where(hi, special.gammaincc(0.5 * df, 0.5 * x), special.gammainc(0.5 * df, 0.5 * x))
    p = np.clip(p, CLAMP, 1.0 - CLAMP)
    return np.where(hi, -special.ndtri(p), special.ndtri(p))


# ---------------------------------------------------------------------------
# data generation


def _bivariate_normal(rho, k, rng):
    z = rng.standard_normal((k, 2))
    z[:, 1] = rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1]
    return z


def generate_complete(setting: StudySetting, rng: np.random.Generator) -> np.ndarray:
    """``n_rows x 2`` draws with correlation ``rho`` on the normal scale."""
    z = _bivariate_normal(setting.rho, setting.n_rows, rng)
    return np.column_stack([_z_to_chi2(z[:, j], df) for j, df in enumerate(setting.marginal_dfs)])


def _z_to_chi2(z, df):
    # lower tail via the cdf and upper tail via the survival function
    out = np.empty_like(z)
    lo = z <= 0
    out[lo] = 2.0 * special.gammaincinv(0.5 * df, special.ndtr(z[lo]))
    out[~lo] = 2.0 * special.gammainccinv(0.5 * df, special.ndtr(-z[~lo]))
    return out


def removal_probability(x1, setting: StudySetting) -> np.ndarray:
    """Stage-two probability of removing cell 2 given the complete cell 1."""
    z1 = chi2_score(x1, setting.marginal_dfs[0])
    return special.expit(setting.beta0 + setting.beta1 * z1)


def apply_missingness(d: np.ndarray, setting: StudySetting,
                      rng: np.random.Generator) -> IncompleteDataset:
    """MCAR removal of every cell, then MAR removal of column 2.

    The second stage only touches rows where both cells survived the first.
    """
    d = np.array(d, dtype=float)
    if np.isnan(d).any():
        raise ConfigurationError("apply_missingness needs complete data")
    u_mcar = rng.random(d.shape)
    u_mar = rng.random(d.shape[0])
    x = d.copy()
    x[u_mcar < setting.p_mcar] = np.nan
    both = ~np.isnan(x).any(axis=1)
    pr = removal_probability(d[:, 0], setting)
    x[both & (u_mar < pr), 1] = np.nan
    return IncompleteDataset(x, ("x1", "x2"))


# ---------------------------------------------------------------------------
# baselines


def ecdf_scores(observed) -> np.ndarray:
    """Normal scores of observed values from ranks ``r / (N_obs + 1)`` (ties averaged)."""
    obs = np.asarray(observed, dtype=float)
    u = stats.rankdata(obs) / (obs.size + 1.0)
    return special.ndtri(u)


def fit_scope(data: IncompleteDataset, eps: float = 1e-5, n_max: int = 1000):
    """Correlation with marginals frozen at the observed-data ecdfs.

    Returns ``(rho_hat, sorted_observed)`` where the second item lists the
    sorted observed values of every column.
    """
    z = np.full(data.values.shape, np.nan)
    sorted_obs = []
    for j in range(data.p):
        ok = data.observed[:, j]
        if ok.sum() < 2:
            raise ConfigurationError(f"column {data.columns[j]!r} needs at least 2 observed values")
        z[ok, j] = ecdf_scores(data.values[ok, j])
        sorted_obs.append(np.sort(data.values[ok, j]))
    sigma, _ = sigma_em(z, data.observed, eps=eps, n_max=n_max)
    return float(sigma[0, 1]), sorted_obs


def fit_gold(data: IncompleteDataset, setting: StudySetting, eps: float = 1e-5,
             n_max: int = 1000) -> float:
    """Correlation by EM on scores from the true chi-square marginals."""
    z = np.full(data.values.shape, np.nan)
    for j, df in enumerate(setting.marginal_dfs):
        ok = data.observed[:, j]
        z[ok, j] = chi2_score(data.values[ok, j], df)
    sigma, _ = sigma_em(z, data.observed, eps=eps, n_max=n_max)
    return float(sigma[0, 1])


# ---------------------------------------------------------------------------
# percentile functions and joint sampling


def percentile_ecdf(values):
    """Interpolated percentile function of a sample; returns a callable ``q(u)``."""
    y = np.sort(np.asarray(values, dtype=float).ravel())
    if y.size == 0:
        raise ConfigurationError("percentile function needs at least one value")
    y.setflags(write=False)

    def q(u):
        return percentile_points(y, u)

    q.values = y
    return q


def mixture_draws(m: MixtureMarginal, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from the mixture: a uniformly chosen center plus normal noise."""
    k = rng.integers(0, m.g, size=n)
    return m.centers[k] + m.bandwidth * rng.standard_normal(n)


def percentile_mixture(m: MixtureMarginal, n_prime: int, rng: np.random.Generator):
    """Percentile function of ``n_prime`` mixture draws."""
    if n_prime < 1:
        raise ConfigurationError("n_prime must be at least 1")
    return percentile_ecdf(mixture_draws(m, n_prime, rng))


def sample_joint(rho_hat: float, q1, q2, k: int, rng: np.random.Generator,
                 z: np.ndarray | None = None) -> np.ndarray:
    """``k`` joint draws: correlated normals pushed through ``q_j(Phi(.))``.

    ``z`` may supply standard normal pairs (``k x 2``, independent columns)
    so several laws can be sampled from common random numbers.
    """
    if not abs(rho_hat) < 1:
        raise DomainError(f"rho_hat must lie in (-1, 1), got {rho_hat}")
    if z is None:
        z = rng.standard_normal((k, 2))
    z = np.asarray(z, dtype=float)[:k]
    z1 = z[:, 0]
    z2 = rho_hat * z1 + np.sqrt(1.0 - rho_hat * rho_hat) * z[:, 1]
    out = np.empty((z.shape[0], 2))
    out[:, 0] = q1(special.ndtr(z1))
    out[:, 1] = q2(special.ndtr(z2))
    return out


def sample_model(model: CopulaModel, k: int, rng: np.random.Generator,
                 n_prime: int = N_PRIME) -> np.ndarray:
    """``k`` joint draws from a fitted model via mixture percentile functions.

    Each marginal's percentile function comes from ``n_prime`` mixture
    draws; normal vectors with correlation ``model.sigma`` are pushed
    through ``q_j(Phi(.))``.
    """
    qs = [percentile_mixture(m, n_prime, rng) for m in model.marginals]
    z = rng.standard_normal((k, model.p)) @ model.chol.T
    u = special.ndtr(z)
    out = np.empty((k, model.p))
    for j, q in enumerate(qs):
        out[:, j] = q(u[:, j])
    return out


# ---------------------------------------------------------------------------
# two-dimensional KS


def _quadrant_max(anchor, own, other) -> int:
    """Largest quadrant gap over anchors from ``own``, scaled by ``n * m``.

    Working with ``|c_own * m - c_other * n|`` keeps everything in integers.
    """
    n, m = own.shape[0], other.shape[0]
    ax, ay = anchor[:, 0], anchor[:, 1]
    cx, cy, cxy = kernels.quadrant_counts(ax, ay, own[:, 0], own[:, 1])
    # the anchor sits in its own lower-left quadrant; drop it there
    cx, cy, cxy = cx - 1, cy - 1, cxy - 1
    dx, dy, dxy = kernels.quadrant_counts(ax, ay, other[:, 0], other[:, 1])
    own_q = np.stack([n - 1 - cx - cy + cxy, cx - cxy, cxy, cy - cxy])
    oth_q = np.stack([m - dx - dy + dxy, dx - dxy, dxy, dy - dxy])
    return int(np.abs(own_q * m - oth_q * n).max())


def ks2d_two_sample(a, b) -> float:
    """Two-sample, two-dimensional KS statistic of Fasano and Franceschini.

    For every point of each sample the four quadrants around it are
    compared by their empirical fractions in both samples; the statistic is
    the mean of the two per-sample maxima. An anchor is not counted in its
    own sample. Both maxima share the denominator ``k1 * k2``, so the result
    is a single correctly rounded ratio of integers.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != 2 or b.shape[1] != 2:
        raise ConfigurationError("KS samples must be k x 2 matrices")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ConfigurationError("KS samples must be nonempty")
    num = _quadrant_max(a, a, b) + _quadrant_max(b, b, a)
    return num / (2 * a.shape[0] * b.shape[0])


# ---------------------------------------------------------------------------
# marginal diagnostics for column 2


def signed_area_ecdf(observed, df) -> float:
    """Integral of ``ecdf - F_true`` over the support; positive means shifted left."""
    return float(df - np.mean(observed))


def sup_error_ecdf(observed, df) -> float:
    """Sup-norm distance between the observed ecdf and the true cdf."""
    y = np.sort(np.asarray(observed, dtype=float))
    n = y.size
    f = chi2_cdf(y, df)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def sup_error_mixture(m: MixtureMarginal, df, n_grid: int = 20_001) -> float:
    """Sup-norm distance between a mixture cdf and the true cdf on a fine grid."""
    hi = float(chi2_quantile(1.0 - 1e-9, df))
    lo = min(0.0, float(m.centers[0] - 8.0 * m.bandwidth))
    hi = max(hi, float(m.centers[-1] + 8.0 * m.bandwidth))
    x = np.linspace(lo, hi, n_grid)
    true = chi2_cdf(np.maximum(x, 0.0), df)
    return float(np.max(np.abs(mix_cdf(m, x) - true)))


# ---------------------------------------------------------------------------
# driver


def rep_seed(setting: StudySetting, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(setting.seed) & 0xFFFFFFFF, int(rep)])


def run_rep(setting: StudySetting, rep: int) -> dict:
    """One repetition; returns a row keyed by :data:`RESULT_COLUMNS`."""
    ss = rep_seed(setting, rep)
    s_gen, s_mask, s_ecm, s_truth, s_methods, s_mix = ss.spawn(6)
    df1, df2 = setting.marginal_dfs

    d = generate_complete(setting, np.random.default_rng(s_gen))
    data = apply_missingness(d, setting, np.random.default_rng(s_mask))

    ecm_seed = int(s_ecm.generate_state(1)[0])
    model, trace = run_ecm(data, replace(setting.ecm, master_seed=ecm_seed))
    rho_em = float(model.sigma[0, 1])
    rho_scope, scope_obs = fit_scope(data, eps=setting.scope_eps)
    rho_gold = fit_gold(data, setting, eps=setting.scope_eps)

    def true_q1(u):
        return chi2_quantile(u, df1)

    def true_q2(u):
        return chi2_quantile(u, df2)

    k = setting.n_ks
    truth = sample_joint(setting.rho, true_q1, true_q2, k, np.random.default_rng(s_truth))
    # common normal draws for the three fitted laws
    z_common = np.random.default_rng(s_methods).standard_normal((k, 2))
    mix_rng = np.random.default_rng(s_mix)
    q_em = [percentile_mixture(m, setting.n_prime, mix_rng) for m in model.marginals]
    q_scope = [percentile_ecdf(v) for v in scope_obs]
    s_em = sample_joint(rho_em, q_em[0], q_em[1], k, None, z_common)
    s_scope = sample_joint(rho_scope, q_scope[0], q_scope[1], k, None, z_common)
    s_gold = sample_joint(rho_gold, true_q1, true_q2, k, None, z_common)

    obs2 = data.column_observed(1)
    return {
        "rep": rep,
        "seed": ecm_seed,
        "rho_scope": rho_scope,
        "rho_em": rho_em,
        "rho_gold": rho_gold,
        "ks_scope": ks2d_two_sample(s_scope, truth),
        "ks_em": ks2d_two_sample(s_em, truth),
        "ks_gold": ks2d_two_sample(s_gold, truth),
        "area_obs2": signed_area_ecdf(obs2, df2),
        "sup_obs2": sup_error_ecdf(obs2, df2),
        "sup_em2": sup_error_mixture(model.marginals[1], df2),
        "missing1": int((~data.observed[:, 0]).sum()),
        "missing2": int((~data.observed[:, 1]).sum()),
        "em_iterations": len(trace),
    }


def _safe_rep(args):
    setting, rep = args
    try:
        return rep, run_rep(setting, rep), None
    except (CopulaEMError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


@dataclass
class StudyResult:
    """Per-repetition rows of one setting plus any failed repetitions."""

    setting: StudySetting
    rows: list
    failures: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path_or_buf=None, with_setting: bool = False):
        if path_or_buf is None:
            buf = io.StringIO()
            self.to_csv(buf, with_setting)
            return buf.getvalue()
        if isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__"):
            with open(path_or_buf, "w", newline="") as fh:
                return self.to_csv(fh, with_setting)
        write_rows([self], path_or_buf, with_setting)
        return None

    def summary(self) -> dict:
        """Median and quartiles of every metric, plus run metadata."""
        out = {"setting": self.setting.to_dict(), "label": self.setting.label,
               "completed": len(self.rows), "failed": len(self.failures),
               "failures": [{"rep": r, "error": e} for r, e in self.failures], "metrics": {}}
        for name in SUMMARY_METRICS:
            v = self.column(name)
            if v.size:
                q1, med, q3 = np.percentile(v, [25, 50, 75])
                out["metrics"][name] = {"median": float(med), "q1": float(q1), "q3": float(q3),
                                        "mean": float(v.mean())}
        return out


def _fmt(v):
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_rows(results, fh, with_setting: bool = True):
    """Write the rows of several results into one CSV."""
    w = csv.writer(fh, lineterminator="\n")
    head = (["rho", "beta0", "beta1"] if with_setting else []) + list(RESULT_COLUMNS)
    w.writerow(head)
    for res in results:
        s = res.setting
        pre = [repr(float(s.rho)), repr(float(s.beta0)), repr(float(s.beta1))] if with_setting else []
        for r in res.rows:
            w.writerow(pre + [_fmt(r[c]) for c in RESULT_COLUMNS])


def run_study(setting: StudySetting, workers: int = 1) -> StudyResult:
    """All repetitions of ``setting``.

    Repetitions draw from their own seed streams, so the result does not
    depend on ``workers``. Failed repetitions are logged and skipped.
    """
    return run_studies([setting], workers)[0]


def run_studies(settings, workers: int = 1) -> list:
    """Run several settings, sharing one worker pool across all repetitions."""
    settings = list(settings)
    jobs = [(s, rep) for s in settings for rep in range(s.reps)]
    if workers is None or workers < 1:
        raise ConfigurationError("workers must be at least 1")
    if workers == 1 or len(jobs) <= 1:
        outcomes = [_safe_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_safe_rep, jobs, chunksize=1))
    results, pos = [], 0
    for s in settings:
        res = StudyResult(s, [])
        for rep, row, err in outcomes[pos:pos + s.reps]:
            if err is None:
                res.rows.append(row)
            else:
                log.warning("%s rep %d failed: %s", s.label, rep, err)
                res.failures.append((rep, err))
        pos += s.reps
        results.append(res)
    return results


def summary_json(results) -> str:
    return json.dumps([r.summary() for r in results], indent=2, sort_keys=True) + "\n"
