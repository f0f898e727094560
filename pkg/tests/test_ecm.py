import warnings

import numpy as np
import pytest

from copula_em import numkernel as nk
from copula_em.copula import CopulaModel, log_density
from copula_em.data import IncompleteDataset
from copula_em.ecm import (CompletedSample, EcmConfig, EStepStatistic, ThetaOptConfig, draw_completed,
                           e_step, e_step_v, e_step_z, initial_model, run_ecm, sigma_em, sigma_update,
                           theta_objective, theta_objective_grad, theta_update)
from copula_em.errors import ConfigurationError
from copula_em.marginals import MixtureMarginal, gaussianize, mix_logpdf

from conftest import random_correlation, random_marginal, random_model, std_normal_model

STD = MixtureMarginal([0.0], 1.0)


def test_e_step_v_examples():
    model = std_normal_model(0.5)
    v = e_step_v(model, nk.IndexPartition.from_mask([True, True]), [0.3, -0.2])
    np.testing.assert_allclose(v, [[0.09, -0.06], [-0.06, 0.04]], atol=1e-15)
    v = e_step_v(model, nk.IndexPartition.from_mask([True, False]), [1.0])
    np.testing.assert_allclose(v, [[1.0, 0.5], [0.5, 1.0]], atol=1e-15)
    v = e_step_v(model, nk.IndexPartition.from_mask([False, False]), [])
    np.testing.assert_array_equal(v, model.sigma)


def test_e_step_v_keeps_original_column_order(rng):
    model = random_model(rng, 3)
    part = nk.IndexPartition.from_mask([False, True, False])
    v = e_step_v(model, part, [0.4])
    z1 = gaussianize(model.marginals[1], 0.4)
    assert v[1, 1] == pytest.approx(z1 * z1)
    mu, sp = nk.schur_conditional(model.sigma, part, np.array([z1]))
    np.testing.assert_allclose(v[np.ix_([0, 2], [0, 2])], sp + np.outer(mu, mu))
    np.testing.assert_allclose(v[1, [0, 2]], z1 * mu)


def test_e_step_v_monte_carlo(rng):
    model = random_model(rng, 3)
    part = nk.IndexPartition.from_mask([True, False, False])
    x_obs = [0.8]
    z_obs = np.array([gaussianize(model.marginals[0], 0.8)])
    mu, sp = nk.schur_conditional(model.sigma, part, z_obs)
    zm = nk.mvn_sample(mu, sp, 100_000, rng)
    z = np.column_stack([np.full(zm.shape[0], z_obs[0]), zm])
    np.testing.assert_allclose(e_step_v(model, part, x_obs), z.T @ z / z.shape[0], atol=0.02)


def test_pattern_e_step_matches_rowwise(rng):
    model = random_model(rng, 3)
    x = rng.normal(0, 2, (40, 3))
    x[rng.random(x.shape) < 0.35] = np.nan
    x[0] = np.nan
    data = IncompleteDataset(x)
    stat = e_step(model, data, per_row=True)
    rows = [e_step_v(model, data.partition(i), x[i][data.observed[i]]) for i in range(40)]
    for a, b in zip(stat.per_row, rows):
        np.testing.assert_allclose(a, b, atol=1e-13)
    np.testing.assert_allclose(stat.mean, np.mean(rows, axis=0), atol=1e-13)
    for v in rows:
        assert np.linalg.eigvalsh(v).min() > -1e-12


def test_sigma_update_complete_data_is_sample_correlation(rng):
    z = rng.multivariate_normal([0, 0, 0], random_correlation(rng, 3), size=500)
    sigma, repaired = sigma_update(e_step_z(np.eye(3), z))
    s = z.T @ z
    d = 1 / np.sqrt(np.diag(s))
    ref = s * d[:, None] * d[None, :]
    np.fill_diagonal(ref, 1.0)
    np.testing.assert_allclose(sigma, ref, atol=1e-15)
    assert not repaired


def test_sigma_update_properties(rng):
    c = random_correlation(rng, 3)
    out, _ = sigma_update(EStepStatistic(c))
    np.testing.assert_allclose(out, c, atol=1e-15)
    np.testing.assert_allclose(sigma_update(7.5 * c)[0], out, rtol=1e-14)


def test_sigma_update_repairs_singular():
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.warns(RuntimeWarning):
        out, repaired = sigma_update(s)
    assert repaired
    assert nk.min_pivot(out) >= 1e-10
    assert np.all(np.diag(out) == 1.0)


def test_sigma_em_complete_converges_in_two_steps(rng):
    z = rng.standard_normal((100, 2))
    sigma, iters = sigma_em(z)
    assert iters == 2


def _sample(rng, n=60, p=3):
    x = rng.normal(0, 2, (n, p))
    w = np.where(rng.random(n) < 0.5, 1.0, 0.25)
    return CompletedSample(x, w)


def test_objective_identity_precision(rng):
    margs = [random_marginal(rng) for _ in range(3)]
    smp = _sample(rng)
    ref = sum(float(smp.w @ mix_logpdf(m, smp.x[:, j])) for j, m in enumerate(margs))
    assert theta_objective(margs, np.eye(3), smp) == pytest.approx(ref, rel=1e-13)


def test_objective_matches_log_density(rng):
    model = random_model(rng, 3)
    x = rng.normal(0, 2, (25, 3))
    smp = CompletedSample.from_copies(x, 1)
    ref = sum(log_density(model, row) for row in x) + 0.5 * model.logdet * len(x)
    assert theta_objective(model.marginals, model.precision, smp) == pytest.approx(ref, rel=1e-12)


def test_objective_drops_when_centers_move_away(rng):
    margs = [MixtureMarginal(rng.normal(0, 1, 3), 1.0) for _ in range(2)]
    smp = _sample(rng, p=2)
    k = np.linalg.inv([[1.0, 0.4], [0.4, 1.0]])
    base = theta_objective(margs, k, smp)
    far = [margs[0].with_centers(margs[0].centers + 40.0), margs[1]]
    assert theta_objective(far, k, smp) < base


def _fd_grad(margs, k, smp, h=1e-5):
    out = []
    for j, m in enumerate(margs):
        g = np.empty(m.g)
        for c in range(m.g):
            step = h * max(1.0, abs(m.centers[c]))

            def f(d):
                cen = m.centers.copy()
                cen[c] += d
                # keep the component identity: no re-sorting across neighbours
                mm = MixtureMarginal.__new__(MixtureMarginal)
                object.__setattr__(mm, "centers", cen)
                object.__setattr__(mm, "bandwidth", m.bandwidth)
                return theta_objective(margs[:j] + [mm] + margs[j + 1:], k, smp)

            g[c] = (f(step) - f(-step)) / (2 * step)
        out.append(g)
    return out


def test_gradient_matches_finite_differences(rng):
    for _ in range(5):
        p = int(rng.integers(2, 4))
        margs = [random_marginal(rng) for _ in range(p)]
        k = np.linalg.inv(random_correlation(rng, p))
        smp = _sample(rng, p=p)
        for a, b in zip(theta_objective_grad(margs, k, smp), _fd_grad(margs, k, smp)):
            np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6 * np.max(np.abs(b)))


def test_gradient_identity_precision_is_logpdf_score(rng):
    from copula_em.marginals import logpdf_grad
    margs = [random_marginal(rng) for _ in range(2)]
    smp = _sample(rng, n=10, p=2)
    grads = theta_objective_grad(margs, np.eye(2), smp)
    for j, m in enumerate(margs):
        ref = sum(w * logpdf_grad(m, x) for w, x in zip(smp.w, smp.x[:, j]))
        np.testing.assert_allclose(grads[j], ref, rtol=1e-12, atol=1e-12)


def test_gradient_block_sparsity(rng):
    k = np.array([[1.0, 0.0, 0.4], [0.0, 1.0, -0.3], [0.4, -0.3, 1.0]])
    margs = [random_marginal(rng) for _ in range(3)]
    smp = _sample(rng)
    g0 = theta_objective_grad(margs, k, smp)[0]
    moved = [margs[0], margs[1].with_centers(margs[1].centers + 1.7), margs[2]]
    g1 = theta_objective_grad(moved, k, smp)[0]
    np.testing.assert_allclose(g0, g1, rtol=0, atol=1e-10)


@pytest.mark.parametrize("method", ["lbfgs", "gradient"])
def test_theta_update_gaussian_mean(rng, method):
    x = rng.normal(1.5, 1.0, (200, 1))
    smp = CompletedSample(x, rng.uniform(0.2, 1.0, 200))
    out = theta_update([MixtureMarginal([0.0], 1.0)], np.eye(1), smp, ThetaOptConfig(method=method))
    assert out[0].centers[0] == pytest.approx(np.average(x[:, 0], weights=smp.w), abs=1e-6)


@pytest.mark.parametrize("method", ["lbfgs", "gradient"])
def test_theta_update_never_decreases(rng, method):
    opt = ThetaOptConfig(method=method, max_steps=30)
    for _ in range(20):
        p = int(rng.integers(1, 4))
        margs = [random_marginal(rng) for _ in range(p)]
        k = np.linalg.inv(random_correlation(rng, p))
        smp = _sample(rng, n=40, p=p)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            new = theta_update(margs, k, smp, opt)
        assert theta_objective(new, k, smp) >= theta_objective(margs, k, smp) - 1e-9
        assert all(np.all(np.diff(m.centers) >= 0) for m in new)


def test_theta_update_at_optimum_stays(rng):
    x = rng.normal(0.0, 1.0, (100, 1))
    smp = CompletedSample(x, np.ones(100))
    opt = [MixtureMarginal([float(x.mean())], 1.0)]
    out = theta_update(opt, np.eye(1), smp)
    assert out[0].centers[0] == pytest.approx(x.mean(), abs=1e-8)


def test_draw_completed_per_row_streams(rng):
    model = random_model(rng, 2)
    x = rng.normal(0, 1, (10, 2))
    x[[1, 4, 7], 1] = np.nan
    x[5, 0] = np.nan
    a = draw_completed(model, IncompleteDataset(x), 5, 3, 2)
    assert a.x.shape[0] == 6 + 4 * 5
    assert a.w.sum() == pytest.approx(10.0)
    # an extra complete row does not change anyone else's draws
    b = draw_completed(model, IncompleteDataset(np.vstack([x, [[0.1, 0.2]]])), 5, 3, 2)
    np.testing.assert_array_equal(a.x[6:], b.x[7:])
    c = draw_completed(model, IncompleteDataset(x), 5, 3, 3)
    assert not np.array_equal(a.x[6:], c.x[6:])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EcmConfig(g=0)
    with pytest.raises(ConfigurationError):
        EcmConfig(eps_converged=0.0)
    with pytest.raises(ConfigurationError):
        EcmConfig(theta_opt=ThetaOptConfig(method="newton"))
    cfg = EcmConfig()
    assert (cfg.mc_size(0), cfg.mc_size(19), cfg.mc_size(20)) == (20, 20, 1000)


def test_initial_model_needs_g_values():
    x = np.array([[1.0, np.nan], [2.0, 1.0], [3.0, np.nan]])
    with pytest.raises(ConfigurationError, match="fewer than g=2"):
        initial_model(IncompleteDataset(x), 2)
    m = initial_model(IncompleteDataset(x), 1)
    np.testing.assert_array_equal(m.sigma, np.eye(2))


def test_fixed_identity_marginals_complete_data(rng):
    z = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=300)
    model, trace = run_ecm(IncompleteDataset(z), EcmConfig(), init=std_normal_model(0.0),
                           fix_marginals=True)
    s = z.T @ z
    assert model.sigma[0, 1] == pytest.approx(s[0, 1] / np.sqrt(s[0, 0] * s[1, 1]), abs=1e-15)
    assert trace.iterations[0]["sigma"][0, 1] == model.sigma[0, 1]
    assert trace.converged and len(trace) == 2


SMALL = EcmConfig(g=5, n_max=6, m_small=5, m_large=20, n_small=4)


def test_run_ecm_deterministic(rng):
    x = rng.normal(0, 1, (40, 2))
    x[rng.random(x.shape) < 0.2] = np.nan
    data = IncompleteDataset(x)
    m1, t1 = run_ecm(data, SMALL)
    m2, t2 = run_ecm(data, SMALL)
    assert t1.to_csv() == t2.to_csv()
    np.testing.assert_array_equal(m1.sigma, m2.sigma)
    assert len(t1) <= SMALL.n_max
    header = t1.to_csv().splitlines()[0].split(",")
    assert header[:6] == ["iteration", "m", "eps", "eps_sigma", "eps_theta", "objective"]
    assert "sigma_0_1" in header


def test_run_ecm_dimension_mismatch(rng):
    x = rng.normal(0, 1, (40, 3))
    with pytest.raises(ConfigurationError):
        run_ecm(IncompleteDataset(x), SMALL, init=std_normal_model(0.1))


def _study_data(rho, seed):
    from copula_em.simstudy import StudySetting, apply_missingness, generate_complete
    s = StudySetting(rho=rho, beta0=0.0, beta1=2.0)
    r = np.random.default_rng(seed)
    return apply_missingness(generate_complete(s, r), s, r)


@pytest.mark.slow
def test_run_ecm_study_setting():
    model, trace = run_ecm(_study_data(0.5, 2024), EcmConfig(master_seed=1))
    assert abs(model.sigma[0, 1] - 0.5) < 0.15
    assert len(trace) <= 25


@pytest.mark.slow
def test_run_ecm_independent_data():
    # single fits scatter by about 0.1 at N=200, so the median of five is checked
    est = [run_ecm(_study_data(0.0, seed), EcmConfig(master_seed=seed))[0].sigma[0, 1]
           for seed in range(5)]
    assert abs(np.median(est)) < 0.1
