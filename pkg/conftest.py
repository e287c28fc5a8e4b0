import numpy as np
import pytest

from src.model_core import HyperPrior, LatentBlock, LikelihoodFamily, ModelSpec, simulate_dataset
from src.templates import ModelTemplates


def fixed_only_spec(family, covariates, y=None, variance=1.0, trials=None):
    """Fixed effects only (no hyperparameters); covariates is n_obs x k"""
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    n_obs, k = covariates.shape
    rows, cols = np.nonzero(covariates)
    return ModelSpec(
        blocks=[LatentBlock("fixed", k, name="beta")],
        design_rows=rows, design_cols=cols, design_vals=covariates[rows, cols],
        n_obs=n_obs, likelihood=family, hyper_priors=(),
        fixed_mean=np.zeros(k), fixed_variance=np.full(k, variance),
        trials=trials, y=y,
    )


def intercept_iid_spec(family, y, prior=None, fixed_variance=1.0, trials=None):
    """Intercept plus one iid effect per observation"""
    n = len(y)
    rows = np.repeat(np.arange(n), 2)
    cols = np.ravel(np.column_stack([np.zeros(n, dtype=int), 1 + np.arange(n)]))
    return ModelSpec(
        blocks=[LatentBlock("fixed", 1, name="beta"),
                LatentBlock("iid", n, offset=1, hyper=(0,), name="u")],
        design_rows=rows, design_cols=cols, design_vals=np.ones(2 * n), n_obs=n,
        likelihood=family, hyper_priors=(prior or HyperPrior("gamma", (0,), shape=1.0, rate=1.0),),
        fixed_mean=[0.0], fixed_variance=[fixed_variance], trials=trials, y=y,
        hyper_names=("log_precision",),
    )


@pytest.fixture
def one_latent_bernoulli():
    """x ~ N(0, 1), three Bernoulli successes with eta = x"""
    return fixed_only_spec(LikelihoodFamily("bernoulli"), np.ones((3, 1)), y=[1.0, 1.0, 1.0])


@pytest.fixture
def gaussian_fixed():
    """Linear regression with known noise precision; exact Gaussian posterior"""
    rng = np.random.default_rng(11)
    t = np.linspace(-1.0, 1.0, 15)
    covariates = np.column_stack([np.ones_like(t), t])
    y = 0.5 + 1.5 * t + rng.normal(0.0, 1.0 / np.sqrt(2.0), size=t.size)
    return fixed_only_spec(LikelihoodFamily("gaussian", 2.0), covariates, y=y, variance=4.0)


@pytest.fixture
def gaussian_template():
    instance = ModelTemplates().build("gaussian")
    y = simulate_dataset(instance.simulate_spec, instance.truth, 3)
    return instance.fit_spec.with_data(y)


@pytest.fixture
def minimal_model():
    instance = ModelTemplates().build("minimal", {"n": 60})
    y = simulate_dataset(instance.simulate_spec, instance.truth, 1)
    return instance.fit_spec.with_data(y)
