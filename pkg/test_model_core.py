import numpy as np
import pytest
from scipy import integrate, stats

from conftest import fixed_only_spec, intercept_iid_spec
from src.exceptions import ModelSpecError
from src.likelihoods import loglik_terms
from src.model_core import (HyperPrior, LatentBlock, LikelihoodFamily, ModelSpec, TrueValues,
                            ar1_precision, bivariate_covariance, bivariate_precision,
                            block_log_density, build_prior_precision, correlation_from_internal,
                            internal_from_correlation, simulate_dataset)
from src.priors import gamma_on_log_precision, log_prior_hyper, wishart_internal_logdensity
from src.templates import ModelTemplates


def test_correlation_transform_round_trip():
    for rho in (-0.95, -0.3, 0.0, 0.5, 0.9):
        assert correlation_from_internal(internal_from_correlation(rho)) == pytest.approx(rho, abs=1e-14)
    assert internal_from_correlation(0.0) == 0.0


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_correlation_outside_unit_interval_rejected(rho):
    with pytest.raises(ModelSpecError):
        internal_from_correlation(rho)


def test_ar1_precision_matches_stationary_covariance():
    kappa, rho, n = 2.0, 0.6, 8
    Q, log_det = ar1_precision(n, kappa, rho)
    lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    np.testing.assert_allclose(np.linalg.inv(Q), rho ** lags / kappa, atol=1e-12)
    assert log_det == pytest.approx(np.linalg.slogdet(Q)[1], abs=1e-10)


def test_ar1_unit_marginal_precision_gives_unit_variances():
    Q, _ = ar1_precision(12, 1.0, -0.4)
    np.testing.assert_allclose(np.diag(np.linalg.inv(Q)), np.ones(12), atol=1e-12)


def test_bivariate_precision_inverts_covariance():
    t = (np.log(2.0), np.log(4.0), internal_from_correlation(0.5))
    W, log_det = bivariate_precision(*t)
    cov = bivariate_covariance(*t)
    np.testing.assert_allclose(W @ cov, np.eye(2), atol=1e-12)
    assert cov[0, 1] == pytest.approx(0.5 * np.sqrt(0.5 * 0.25))
    assert log_det == pytest.approx(np.linalg.slogdet(W)[1], abs=1e-12)


def test_prior_precision_is_block_diagonal(minimal_model):
    Q, log_det = build_prior_precision(minimal_model, [0.7])
    assert Q[0, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(np.diag(Q)[1:], np.exp(0.7))
    assert np.count_nonzero(Q - np.diag(np.diag(Q))) == 0
    assert log_det == pytest.approx(60 * 0.7)


@pytest.mark.parametrize("template,params", [
    ("model08", {"clusters": 10}),
    ("ar1", {"n": 30}),
])
def test_prior_precision_is_spd_for_random_theta(template, params):
    spec = ModelTemplates().build(template, params).fit_spec
    rng = np.random.default_rng(8)
    for _ in range(200):
        theta = rng.uniform(-3.0, 3.0, size=spec.n_hyper)
        Q, log_det = build_prior_precision(spec, theta)
        np.testing.assert_allclose(Q, Q.T, atol=1e-12)
        L = np.linalg.cholesky(Q)
        assert np.all(np.diag(L) > 0)
        assert log_det == pytest.approx(2.0 * np.sum(np.log(np.diag(L))), rel=1e-8, abs=1e-8)


def test_block_log_density_matches_scipy(minimal_model):
    block = minimal_model.blocks[1]
    u = np.linspace(-1.0, 1.0, block.length)
    expected = stats.norm.logpdf(u, scale=np.exp(-0.5 * 0.3)).sum()
    assert block_log_density(minimal_model, block, u, [0.3]) == pytest.approx(expected, rel=1e-12)


def test_wrong_hyperparameter_count_rejected(minimal_model):
    with pytest.raises(ModelSpecError):
        build_prior_precision(minimal_model, [0.0, 1.0])
    with pytest.raises(ModelSpecError):
        build_prior_precision(minimal_model, [np.inf])


@pytest.mark.parametrize("family,y,trials", [
    (LikelihoodFamily("bernoulli"), [0.0, 1.0, 1.0], None),
    (LikelihoodFamily("binomial"), [0.0, 3.0, 5.0], np.array([5, 5, 5])),
    (LikelihoodFamily("poisson"), [0.0, 2.0, 7.0], None),
    (LikelihoodFamily("gaussian", 3.0), [-0.4, 0.1, 2.2], None),
])
def test_likelihood_derivatives_match_finite_differences(family, y, trials):
    spec = fixed_only_spec(family, np.ones((3, 1)), trials=trials)
    eta = np.array([-0.8, 0.3, 1.1])
    h = 1e-5
    value, l1, l2, l3 = loglik_terms(spec, eta, y)
    plus, minus = loglik_terms(spec, eta + h, y), loglik_terms(spec, eta - h, y)
    np.testing.assert_allclose(l1, (plus[0] - minus[0]) / (2 * h), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(l2, (plus[1] - minus[1]) / (2 * h), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(l3, (plus[2] - minus[2]) / (2 * h), rtol=1e-5, atol=1e-8)
    assert np.all(l2 <= 0)


def test_likelihood_values_match_scipy():
    spec = fixed_only_spec(LikelihoodFamily("binomial"), np.ones((2, 1)), trials=np.array([4, 4]))
    eta = np.array([0.2, -1.0])
    value = loglik_terms(spec, eta, [1.0, 4.0])[0]
    p = 1.0 / (1.0 + np.exp(-eta))
    np.testing.assert_allclose(value, stats.binom.logpmf([1, 4], 4, p), rtol=1e-12)
    pois = fixed_only_spec(LikelihoodFamily("poisson"), np.ones((1, 1)))
    assert loglik_terms(pois, np.array([0.5]), [3.0])[0][0] == pytest.approx(
        stats.poisson.logpmf(3, np.exp(0.5)))


def test_observations_outside_support_rejected():
    with pytest.raises(ModelSpecError):
        fixed_only_spec(LikelihoodFamily("bernoulli"), np.ones((2, 1)), y=[0.0, 2.0])
    with pytest.raises(ModelSpecError):
        fixed_only_spec(LikelihoodFamily("poisson"), np.ones((2, 1)), y=[0.5, 1.0])
    with pytest.raises(ModelSpecError):
        fixed_only_spec(LikelihoodFamily("binomial"), np.ones((1, 1)), y=[4.0], trials=np.array([3]))


def test_gamma_prior_on_log_precision():
    assert gamma_on_log_precision(0.0, 1.0, 1.0) == pytest.approx(-1.0)
    grid = np.linspace(-40.0, 5.0, 20001)
    mass = integrate.trapezoid(np.exp(gamma_on_log_precision(grid, 2.0, 3.0)), grid)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_normal_prior_at_its_mean():
    spec = intercept_iid_spec(LikelihoodFamily("bernoulli"), [1.0, 0.0],
                              prior=HyperPrior("normal", (0,), mean=0.0, variance=1.0))
    assert log_prior_hyper(spec, [0.0]) == pytest.approx(-0.5 * np.log(2.0 * np.pi))


def test_wishart_internal_density_includes_jacobian():
    df, scale = 4.0, (0.5, 0.2)
    theta = np.array([0.3, -0.4, 0.8])

    def unique_entries(t):
        W, _ = bivariate_precision(*t)
        return np.array([W[0, 0], W[1, 1], W[0, 1]])

    h = 1e-6
    J = np.column_stack([(unique_entries(theta + h * e) - unique_entries(theta - h * e)) / (2 * h)
                         for e in np.eye(3)])
    W, _ = bivariate_precision(*theta)
    expected = stats.wishart.logpdf(W, df=df, scale=np.diag(scale)) + np.log(abs(np.linalg.det(J)))
    assert wishart_internal_logdensity(theta, df, scale)[0] == pytest.approx(expected, abs=1e-6)


def test_simulation_is_deterministic_given_seed():
    instance = ModelTemplates().build("model07", {"clusters": 10})
    first = simulate_dataset(instance.simulate_spec, instance.truth, 5)
    second = simulate_dataset(instance.simulate_spec, instance.truth, 5)
    other = simulate_dataset(instance.simulate_spec, instance.truth, 6)
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)
    assert set(np.unique(first)) <= {0.0, 1.0}


def test_simulate_checks_truth_dimensions(minimal_model):
    with pytest.raises(ModelSpecError):
        simulate_dataset(minimal_model, TrueValues(fixed=np.array([1.0]), hyper=np.array([0.0, 1.0])), 1)


def test_fixed_index_set_includes_length_one_random_blocks():
    spec = ModelSpec(
        blocks=[LatentBlock("fixed", 2, name="beta"),
                LatentBlock("iid", 1, offset=2, hyper=(0,), name="v"),
                LatentBlock("iid", 3, offset=3, hyper=(1,), name="u")],
        design_rows=[0, 0, 0, 0, 1, 1, 2, 2], design_cols=[0, 2, 3, 1, 0, 4, 0, 5],
        design_vals=np.ones(8), n_obs=3, likelihood=LikelihoodFamily("poisson"),
        hyper_priors=(HyperPrior("gamma", (0,)), HyperPrior("gamma", (1,))),
        fixed_mean=[0.0, 0.0], fixed_variance=[1.0, 1.0],
    )
    assert spec.fixed_index_set.tolist() == [0, 1, 2]
    assert spec.latent_names[:3] == ("beta0", "beta1", "v[0]")
    assert spec.hyper_names == ("theta1", "theta2")


def test_inconsistent_specs_rejected():
    good = dict(blocks=[LatentBlock("fixed", 1)], design_rows=[0], design_cols=[0],
                design_vals=[1.0], n_obs=1, likelihood=LikelihoodFamily("poisson"),
                hyper_priors=(), fixed_mean=[0.0], fixed_variance=[1.0])
    ModelSpec(**good)
    with pytest.raises(ModelSpecError):
        ModelSpec(**{**good, "design_cols": [1]})
    with pytest.raises(ModelSpecError):
        ModelSpec(**{**good, "fixed_variance": [0.0]})
    with pytest.raises(ModelSpecError):
        ModelSpec(**{**good, "hyper_priors": (HyperPrior("gamma", (0,)),)})
    with pytest.raises(ModelSpecError):
        ModelSpec(**{**good, "likelihood": LikelihoodFamily("binomial")})
    with pytest.raises(ModelSpecError):
        LatentBlock("iid", 3, hyper=())
    with pytest.raises(ModelSpecError):
        HyperPrior("gamma", (0,), shape=-1.0)
