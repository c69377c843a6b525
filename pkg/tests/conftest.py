import numpy as np
import pytest

from npsurvey.model import CovariateSchema, DesignInfo, Family, SampleA, SampleB, Theta, Xi


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        g[j] = (f(x + e) - f(x - e)) / (2 * e[j])
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


SCHEMA3 = CovariateSchema(("u1", "u2", "z"), ("shared", "shared", "instrument"))


def make_samples(seed=0, n_a=300, n_b=600, N=20000, family=Family.BERNOULLI, gamma=0.8):
    """Small two-sample dataset from the simulation DGP's functional form."""
    rng = np.random.default_rng(seed)

    def draw_x(n):
        return np.column_stack([rng.standard_normal((n, 2)), rng.uniform(0, 3, n)])

    Xa = draw_x(n_a)
    lin = -1.8 + 1.2 * Xa[:, 0] + 1.2 * Xa[:, 1] + Xa[:, 2]
    if family is Family.BERNOULLI:
        ya = (rng.uniform(size=n_a) < 1 / (1 + np.exp(-lin))).astype(float)
    else:
        ya = lin + rng.standard_normal(n_a)
    Xb = draw_x(n_b)
    A = SampleA(Xa, ya, SCHEMA3)
    B = SampleB(Xb, np.full(n_b, N / n_b), SCHEMA3, DesignInfo.srswor(n_b, N))
    return A, B


@pytest.fixture
def samples():
    return make_samples()


@pytest.fixture
def theta0():
    return Theta(3.0, np.array([-0.7, 1.5]), 0.8)


@pytest.fixture
def xi_bern():
    return Xi(Family.BERNOULLI, np.array([-1.8, 1.2, 1.2, 1.0]))


@pytest.fixture
def xi_gauss():
    return Xi(Family.GAUSSIAN, np.array([0.3, 0.5, -0.4, 0.2]), 1.7)
