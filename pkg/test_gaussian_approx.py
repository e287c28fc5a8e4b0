import numpy as np
import pytest
from scipy import optimize

from conftest import fixed_only_spec
from src.gaussian_approx import (GaussianApprox, conditional_mean_given_one, fit_gaussian_approx,
                                 gradient, log_joint, marginal_variances)
from src.model_core import LikelihoodFamily, ar1_precision, build_prior_precision


def _random_spd(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    return M @ M.T + n * np.eye(n)


def test_gaussian_likelihood_converges_in_one_step(gaussian_template):
    theta = [0.4]
    ga = fit_gaussian_approx(gaussian_template, theta)
    assert ga.iterations == 1
    Q_prior, _ = build_prior_precision(gaussian_template, theta)
    A = gaussian_template.design_matrix.toarray()
    lam = gaussian_template.likelihood.precision
    direct = np.linalg.solve(Q_prior + lam * A.T @ A, lam * A.T @ gaussian_template.y)
    np.testing.assert_allclose(ga.mode, direct, atol=1e-10)


def test_all_successes_push_the_mode_up(minimal_model):
    spec = minimal_model.with_data(np.ones(minimal_model.n_obs))
    ga = fit_gaussian_approx(spec, [0.0])
    assert np.all(ga.mode > 0)


def test_mode_matches_independent_optimizer():
    covariates = np.array([[1.0, 0.5, 0.0], [1.0, -1.0, 1.0], [1.0, 2.0, -1.0]])
    spec = fixed_only_spec(LikelihoodFamily("bernoulli"), covariates, y=[1.0, 0.0, 1.0], variance=2.0)
    ga = fit_gaussian_approx(spec, [])
    x = np.zeros(3)
    for _ in range(2000):
        previous = x.copy()
        for i in range(3):
            def partial(t, i=i):
                trial = x.copy()
                trial[i] = t
                return gradient(spec, trial, [])[i]
            x[i] = optimize.brentq(partial, x[i] - 20.0, x[i] + 20.0, xtol=1e-15)
        if np.max(np.abs(x - previous)) < 1e-13:
            break
    np.testing.assert_allclose(ga.mode, x, atol=1e-8)


def test_gradient_vanishes_at_mode(minimal_model):
    theta = [0.3]
    ga = fit_gaussian_approx(minimal_model, theta)
    assert np.max(np.abs(gradient(minimal_model, ga.mode, theta))) < 1e-8


def test_log_determinant_matches_eigenvalues(minimal_model):
    ga = fit_gaussian_approx(minimal_model, [-0.5])
    assert ga.log_det == pytest.approx(np.sum(np.log(np.linalg.eigvalsh(ga.precision))), abs=1e-8)


def test_warm_start_does_not_move_the_mode(minimal_model):
    cold = fit_gaussian_approx(minimal_model, [0.2])
    neighbour = fit_gaussian_approx(minimal_model, [0.5])
    warm = fit_gaussian_approx(minimal_model, [0.2], warm_start=neighbour.mode)
    np.testing.assert_allclose(warm.mode, cold.mode, rtol=1e-7, atol=1e-7)


def test_marginal_variances_of_diagonal_precision():
    ga = GaussianApprox.from_precision(np.diag([4.0, 0.25]))
    np.testing.assert_allclose(marginal_variances(ga), [0.25, 4.0], rtol=1e-14)


def test_marginal_variances_match_dense_inverse():
    Q = _random_spd(5, 3)
    ga = GaussianApprox.from_precision(Q)
    np.testing.assert_allclose(marginal_variances(ga), np.diag(np.linalg.inv(Q)), atol=1e-10)
    np.testing.assert_allclose(ga.marginal_sd ** 2, np.diag(np.linalg.inv(Q)), atol=1e-10)


def test_ar1_marginal_variances():
    Q, _ = ar1_precision(20, 1.0, 0.8)
    np.testing.assert_allclose(marginal_variances(GaussianApprox.from_precision(Q)), np.ones(20), atol=1e-10)


def test_conditional_mean_under_independence():
    mu = np.array([1.0, -2.0, 0.5])
    ga = GaussianApprox.from_precision(np.diag([1.0, 2.0, 3.0]), mode=mu)
    np.testing.assert_allclose(conditional_mean_given_one(ga, 1, 10.0), [1.0, 0.5])


def test_conditional_mean_slope_of_bivariate_normal():
    s1, s2, r = 2.0, 0.5, 0.6
    cov = np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])
    mu = np.array([0.3, -1.0])
    ga = GaussianApprox.from_precision(np.linalg.inv(cov), mode=mu)
    shifted = conditional_mean_given_one(ga, 0, mu[0] + 1.0)
    assert shifted[0] - mu[1] == pytest.approx(r * s2 / s1, abs=1e-10)
    np.testing.assert_array_equal(conditional_mean_given_one(ga, 0, mu[0]), mu[1:])
