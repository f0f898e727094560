import numpy as np
import pytest

from copula_em import CopulaModel, MixtureMarginal


def random_correlation(rng, p):
    a = rng.standard_normal((p, p + 2))
    s = a @ a.T
    d = 1.0 / np.sqrt(np.diag(s))
    c = s * d[:, None] * d[None, :]
    np.fill_diagonal(c, 1.0)
    return 0.5 * (c + c.T)


def random_marginal(rng, g=None):
    g = int(rng.integers(1, 6)) if g is None else g
    return MixtureMarginal(rng.normal(0.0, 2.0, g), float(rng.uniform(0.4, 1.5)))


def random_model(rng, p, g=None):
    return CopulaModel(random_correlation(rng, p), [random_marginal(rng, g) for _ in range(p)])


def std_normal_model(rho):
    m = MixtureMarginal([0.0], 1.0)
    return CopulaModel([[1.0, rho], [rho, 1.0]], [m, m])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
