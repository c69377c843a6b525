import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from npsurvey.exceptions import DimensionError, DomainError
from npsurvey.model import (
    PROB_EPS,
    CovariateSchema,
    Family,
    Theta,
    Xi,
    conditional_density,
    conditional_mean,
    conditional_mean_grads,
    cumulant,
    cumulant_grad_xi,
    linear_predictor,
    outcome_density,
    outcome_loglik,
    participation_prob,
    pi_marginal,
)

from .conftest import central_diff, rel_err

LOGIT_06 = np.log(0.6 / 0.4)

# high-precision references (mpmath, 30 digits)
PI_53 = 0.0049668016500569612
PI_38 = 0.0218812709361304778
C_BERN = 0.5511944605127665010
PI_MARG = 0.3655873294472431836
PR1 = 0.7075301364422054531
DC_DXI = 0.1694955687888699041
DM_DALPHA = 0.0393116554170035750


def one_row(val=0.0):
    return np.array([[val]])


THETA_EX = Theta(4.5, np.array([-0.7, 1.5]), 0.8)
XI_P06 = Xi(Family.BERNOULLI, np.array([LOGIT_06, 0.0]))
THETA_G08 = Theta(0.0, np.array([0.0]), 0.8)


class TestParticipation:
    def test_zero_parameters(self):
        th = Theta(0.0, np.zeros(2), 0.0)
        U = np.array([[1.3, -2.0]])
        assert linear_predictor(U, [1.0], th)[0] == 0.0
        assert participation_prob(U, [1.0], th)[0] == 0.5

    def test_hand_arithmetic(self):
        assert linear_predictor(np.array([[0.0, 0.0]]), [1.0], THETA_EX)[0] == pytest.approx(5.3, abs=1e-12)
        assert linear_predictor(np.array([[1.0, 0.0]]), [0.0], THETA_EX)[0] == pytest.approx(3.8, abs=1e-12)
        assert participation_prob(np.array([[0.0, 0.0]]), [1.0], THETA_EX)[0] == pytest.approx(PI_53, rel=1e-12)
        assert participation_prob(np.array([[1.0, 0.0]]), [0.0], THETA_EX)[0] == pytest.approx(PI_38, rel=1e-12)

    def test_dimension_mismatch_names_columns(self):
        with pytest.raises(DimensionError, match="shared covariate block"):
            linear_predictor(np.zeros((2, 3)), [0, 1], THETA_EX)

    def test_clamped_never_zero_or_one(self):
        th = Theta(0.0, np.zeros(1), 0.0)
        p = participation_prob(np.array([[-1e4], [1e4]]), [0, 0], Theta(0.0, np.ones(1), 0.0))
        assert p[0] == 1 - PROB_EPS and p[1] == PROB_EPS
        assert 0 < participation_prob(np.zeros((1, 1)), [0], th)[0] < 1

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=20))
    def test_strictly_decreasing_in_eta(self, etas):
        etas = np.unique(np.asarray(etas))
        etas = etas[np.concatenate([[True], np.diff(etas) > 1e-6])]
        th = Theta(0.0, np.ones(1), 0.0)
        p = participation_prob(etas[:, None], np.zeros(etas.size), th)
        assert np.all((p > 0) & (p < 1))
        unclamped = np.abs(etas) < 25
        assert np.all(np.diff(p[unclamped]) < 0)


class TestCumulant:
    def test_zero_at_gamma_zero(self, xi_bern, xi_gauss):
        X = np.random.default_rng(1).standard_normal((50, 3))
        for xi in (xi_bern, xi_gauss):
            assert np.all(cumulant(X, 0.0, xi, 0) == 0.0)
            assert np.all(cumulant_grad_xi(X, 0.0, xi) == 0.0)

    def test_bernoulli_closed_form(self):
        assert cumulant(one_row(), 0.8, XI_P06, 0)[0] == pytest.approx(C_BERN, rel=1e-12)

    def test_gaussian_mgf(self):
        xi = Xi(Family.GAUSSIAN, np.array([1.0, 0.0]), 2.0)
        assert cumulant(one_row(), 0.5, xi, 0)[0] == pytest.approx(0.75, abs=1e-15)
        assert cumulant(one_row(), 0.5, xi, 1)[0] == pytest.approx(2.0)
        assert cumulant(one_row(), 0.5, xi, 2)[0] == pytest.approx(2.0)

    def test_grad_xi_intercept(self):
        g = cumulant_grad_xi(one_row(), 0.8, XI_P06)[0]
        assert g[0] == pytest.approx(DC_DXI, rel=1e-12)
        assert g[1] == 0.0

    def test_bad_order(self, xi_bern):
        with pytest.raises(ValueError):
            cumulant(np.zeros((1, 3)), 0.1, xi_bern, 3)

    def test_unknown_family(self):
        with pytest.raises(DomainError):
            Xi("poisson", np.zeros(2))

    @pytest.mark.parametrize("fam", ["bern", "gauss"])
    @given(gamma=st.floats(-2.5, 2.5), seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_derivatives_match_finite_differences(self, fam, gamma, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 3))
        coef = rng.normal(scale=0.8, size=4)
        xi = Xi(Family.BERNOULLI, coef) if fam == "bern" else Xi(Family.GAUSSIAN, coef, 0.5 + rng.uniform())
        c = lambda g: cumulant(x, g, xi, 0)[0]
        c1 = lambda g: cumulant(x, g, xi, 1)[0]
        h = 1e-5
        assert rel_err(cumulant(x, gamma, xi, 1)[0], (c(gamma + h) - c(gamma - h)) / (2 * h), 1e-6) < 1e-5
        assert rel_err(cumulant(x, gamma, xi, 2)[0], (c1(gamma + h) - c1(gamma - h)) / (2 * h), 1e-6) < 1e-5
        assert cumulant(x, gamma, xi, 2)[0] >= 0
        fd = central_diff(lambda v: cumulant(x, gamma, Xi.from_vector(xi.family, v), 0)[0], xi.to_vector())
        np.testing.assert_allclose(cumulant_grad_xi(x, gamma, xi)[0], fd, rtol=1e-6, atol=1e-8)


class TestMarginalAndConditional:
    def test_marginal_reduces_at_gamma_zero(self, xi_bern):
        th = Theta(1.2, np.array([0.3, -0.2]), 0.0)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(20, 3))
        U = X[:, :2]
        for yv in (0.0, 1.0):
            np.testing.assert_allclose(pi_marginal(U, X, th, xi_bern), participation_prob(U, np.full(20, yv), th))

    def test_binary_hand_values(self):
        U = np.zeros((1, 1))
        X = one_row()
        assert pi_marginal(U, X, THETA_G08, XI_P06)[0] == pytest.approx(PI_MARG, rel=1e-12)
        assert conditional_density([1.0], U, X, THETA_G08, XI_P06)[0] == pytest.approx(PR1, rel=1e-12)
        assert conditional_mean(U, X, THETA_G08, XI_P06)[0] == pytest.approx(PR1, rel=1e-12)
        gt, _ = conditional_mean_grads(U, X, THETA_G08, XI_P06)
        assert gt[0, 0] == pytest.approx(DM_DALPHA, rel=1e-10)

    def test_gamma_zero_density_is_outcome_density(self, xi_bern, xi_gauss):
        th = Theta(0.4, np.array([0.1, 0.2]), 0.0)
        X = np.random.default_rng(4).normal(size=(10, 3))
        for xi, y in ((xi_bern, np.ones(10)), (xi_gauss, np.linspace(-2, 2, 10))):
            np.testing.assert_allclose(
                conditional_density(y, X[:, :2], X, th, xi), outcome_density(X, y, xi), rtol=1e-14
            )

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_binary_identities(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(8, 3))
        U = X[:, :2]
        th = Theta(rng.normal(scale=2), rng.normal(size=2), rng.normal(scale=1.5))
        xi = Xi(Family.BERNOULLI, rng.normal(size=4))
        p0 = conditional_density(np.zeros(8), U, X, th, xi)
        p1 = conditional_density(np.ones(8), U, X, th, xi)
        np.testing.assert_allclose(p0 + p1, 1.0, atol=1e-13)
        pim = pi_marginal(U, X, th, xi)
        mix = p0 * participation_prob(U, np.zeros(8), th) + p1 * participation_prob(U, np.ones(8), th)
        np.testing.assert_allclose(pim, mix, rtol=1e-10)
        for yv, py in ((0.0, p0), (1.0, p1)):
            f = outcome_density(X, np.full(8, yv), xi)
            bayes = py * participation_prob(U, np.full(8, yv), th) / pim
            np.testing.assert_allclose(f, bayes, rtol=1e-10)
        np.testing.assert_allclose(conditional_mean(U, X, th, xi), p1, rtol=1e-12)

    @pytest.mark.parametrize("gamma", [-0.9, 0.0, 0.6])
    def test_gaussian_quadrature(self, gamma):
        xi = Xi(Family.GAUSSIAN, np.array([0.2, 0.7]), 0.8)
        th = Theta(-0.3, np.array([0.5]), gamma)
        x = np.array([[0.4]])
        s = np.sqrt(xi.sigma2)
        centre = 0.2 + 0.7 * 0.4
        dens = lambda y: conditional_density(np.array([y]), x, x, th, xi)[0]
        lo, hi = centre - 10 * s + min(gamma * xi.sigma2, 0), centre + 10 * s + max(gamma * xi.sigma2, 0)
        total = integrate.quad(dens, lo, hi, epsabs=1e-12, epsrel=1e-12)[0]
        assert total == pytest.approx(1.0, abs=1e-6)
        mean = integrate.quad(lambda y: y * dens(y), lo, hi, epsabs=1e-12, epsrel=1e-12)[0]
        assert conditional_mean(x, x, th, xi)[0] == pytest.approx(mean, rel=1e-6)
        mix = integrate.quad(
            lambda y: dens(y) * participation_prob(x, [y], th)[0], lo, hi, epsabs=1e-13, epsrel=1e-12
        )[0]
        assert pi_marginal(x, x, th, xi)[0] == pytest.approx(mix, rel=1e-6)

    def test_mean_grads_vanish_in_alpha_beta_at_gamma_zero(self, xi_bern):
        X = np.random.default_rng(5).normal(size=(6, 3))
        gt, _ = conditional_mean_grads(X[:, :2], X, Theta(1.0, np.array([0.2, 0.3]), 0.0), xi_bern)
        np.testing.assert_allclose(gt[:, :3], 0.0, atol=1e-15)

    @pytest.mark.parametrize("fam", ["bern", "gauss"])
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_mean_grads_match_finite_differences(self, fam, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(1, 3))
        U = X[:, :2]
        th = Theta(rng.normal(), rng.normal(size=2), rng.normal())
        coef = rng.normal(scale=0.7, size=4)
        xi = Xi(Family.BERNOULLI, coef) if fam == "bern" else Xi(Family.GAUSSIAN, coef, 0.5 + rng.uniform())
        gt, gx = conditional_mean_grads(U, X, th, xi)
        fd_t = central_diff(lambda v: conditional_mean(U, X, Theta.from_vector(v), xi)[0], th.to_vector())
        fd_x = central_diff(
            lambda v: conditional_mean(U, X, th, Xi.from_vector(xi.family, v))[0], xi.to_vector()
        )
        assert rel_err(gt[0], fd_t, 1e-6) < 1e-5
        assert rel_err(gx[0], fd_x, 1e-6) < 1e-5


class TestOutcomeLoglik:
    def test_half(self):
        xi = Xi(Family.BERNOULLI, np.array([0.0, 0.0]))
        assert outcome_loglik(one_row(), [1.0], xi, 0)[0] == pytest.approx(-0.693147, abs=1e-6)

    @pytest.mark.parametrize("fam", ["bern", "gauss"])
    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_score_and_hessian_finite_differences(self, fam, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 3))
        coef = rng.normal(scale=0.7, size=4)
        if fam == "bern":
            xi, y = Xi(Family.BERNOULLI, coef), np.array([float(rng.integers(2))])
        else:
            xi, y = Xi(Family.GAUSSIAN, coef, 0.5 + rng.uniform()), rng.normal(size=1)
        v = xi.to_vector()
        f = lambda w: outcome_loglik(x, y, Xi.from_vector(xi.family, w), 0)[0]
        assert rel_err(outcome_loglik(x, y, xi, 1)[0], central_diff(f, v), 1e-6) < 1e-5
        H = outcome_loglik(x, y, xi, 2)[0]
        fd_h = np.array(
            [central_diff(lambda w: outcome_loglik(x, y, Xi.from_vector(xi.family, w), 1)[0][j], v) for j in range(v.size)]
        )
        assert rel_err(H, fd_h, 1e-6) < 1e-5
        np.testing.assert_allclose(H, H.T, atol=1e-14)
        if fam == "bern":
            assert np.linalg.eigvalsh(H).max() <= 1e-12


class TestTypes:
    def test_schema_roles(self):
        s = CovariateSchema.from_instruments(["a", "b", "z"], ["z"])
        assert s.shared_names == ("a", "b") and s.instrument_names == ("z",)
        np.testing.assert_array_equal(s.shared_idx, [0, 1])
        with pytest.raises(DimensionError):
            CovariateSchema.from_instruments(["a"], ["q"])
        with pytest.raises(DomainError):
            CovariateSchema(("a",), ("both",))

    def test_xi_constraints(self):
        with pytest.raises(DomainError):
            Xi(Family.GAUSSIAN, np.zeros(2))
        with pytest.raises(DomainError):
            Xi(Family.GAUSSIAN, np.zeros(2), -1.0)
        with pytest.raises(DomainError):
            Xi(Family.BERNOULLI, np.zeros(2), 1.0)

    def test_theta_roundtrip(self):
        th = Theta(1.0, np.array([2.0, 3.0]), 4.0)
        np.testing.assert_array_equal(Theta.from_vector(th.to_vector()).to_vector(), th.to_vector())
        with pytest.raises(DomainError):
            Theta(np.nan, np.zeros(1), 0.0)
