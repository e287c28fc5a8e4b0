import logging

import numpy as np
import pytest

from conftest import intercept_iid_spec
from src.exceptions import MarginalFitError, ModelSpecError
from src.gaussian_approx import fit_gaussian_approx
from src.marginal_improve import (SkewNormalMarginal, fit_grid_moments, grid_offsets,
                                  improved_marginal, improved_marginals)
from src.model_core import LikelihoodFamily


def test_grid_is_seventeen_points():
    offsets = grid_offsets()
    assert len(offsets) == 17
    assert offsets[0] == -4.0 and offsets[-1] == 4.0
    np.testing.assert_allclose(np.diff(offsets), 0.5)


def test_gaussian_model_is_not_shifted(gaussian_template):
    ga = fit_gaussian_approx(gaussian_template, [0.2])
    marginal = improved_marginal(gaussian_template, [0.2], ga, 0)
    assert marginal.improved_mean == pytest.approx(ga.mode[0], abs=1e-8)
    assert marginal.shape == pytest.approx(0.0, abs=1e-8)
    assert marginal.sd == ga.marginal_sd[0]


def test_bernoulli_intercept_is_shifted(minimal_model):
    ga = fit_gaussian_approx(minimal_model, [0.0])
    marginal = improved_marginal(minimal_model, [0.0], ga, 0)
    assert abs(marginal.improved_mean - ga.mode[0]) > 1e-4
    assert marginal.shape != 0.0


def test_fitted_skew_normal_reproduces_targets(minimal_model):
    ga = fit_gaussian_approx(minimal_model, [-0.3])
    for marginal in improved_marginals(minimal_model, [-0.3], ga):
        mean, var, skew = marginal.moments()
        assert mean == pytest.approx(marginal.improved_mean, abs=1e-8)
        assert var == pytest.approx(ga.marginal_sd[marginal.index] ** 2, abs=1e-10)
        assert skew == pytest.approx(marginal.skewness, abs=1e-8)
        assert abs(skew) <= 0.99 + 1e-12


def test_clamped_skewness_is_logged(minimal_model, monkeypatch, caplog):
    monkeypatch.setattr("src.marginal_improve.fit_grid_moments", lambda offsets, log_values: (0.05, 1.4))
    ga = fit_gaussian_approx(minimal_model, [0.0])
    with caplog.at_level(logging.WARNING, logger="src.marginal_improve"):
        marginal = improved_marginal(minimal_model, [0.0], ga, 0)
    assert marginal.skewness == 0.99
    assert any("clamped" in r.getMessage() for r in caplog.records if r.levelno == logging.WARNING)


def test_reflected_data_reflect_the_marginal():
    y = np.array([1.0, 1.0, 1.0, 0.0, 1.0])
    spec = intercept_iid_spec(LikelihoodFamily("bernoulli"), y)
    flipped = spec.with_data(1.0 - y)
    theta = [0.5]
    ga, ga_flip = fit_gaussian_approx(spec, theta), fit_gaussian_approx(flipped, theta)
    m = improved_marginal(spec, theta, ga, 0)
    m_flip = improved_marginal(flipped, theta, ga_flip, 0)
    assert ga_flip.mode[0] == pytest.approx(-ga.mode[0], abs=1e-10)
    assert m_flip.improved_mean - m_flip.gaussian_mean == pytest.approx(
        -(m.improved_mean - m.gaussian_mean), abs=1e-10)
    assert m_flip.shape == pytest.approx(-m.shape, abs=1e-8)


def test_only_fixed_effects_are_improved(minimal_model):
    ga = fit_gaussian_approx(minimal_model, [0.0])
    with pytest.raises(ModelSpecError):
        improved_marginal(minimal_model, [0.0], ga, 5)


def test_concentrated_grid_fails_loudly():
    offsets = grid_offsets()
    log_values = np.full(17, -1e3)
    log_values[8] = 0.0
    with pytest.raises(MarginalFitError):
        fit_grid_moments(offsets, log_values)


def test_grid_moments_of_a_normal_density():
    offsets = grid_offsets()
    mean, skew = fit_grid_moments(offsets, -0.5 * (offsets - 0.2) ** 2)
    assert mean == pytest.approx(0.2, abs=1e-3)
    assert abs(skew) < 1e-2


def test_marginal_distribution_functions():
    marginal = SkewNormalMarginal(index=0, gaussian_mean=0.0, improved_mean=0.1, sd=0.5,
                                  shape=2.0, skewness=0.3)
    q = marginal.quantile(np.array([0.1, 0.5, 0.9]))
    np.testing.assert_allclose(marginal.cdf(q), [0.1, 0.5, 0.9], atol=1e-9)
    assert marginal.standardized_cdf(0.0) == pytest.approx(marginal.cdf(0.1))
    plain = SkewNormalMarginal.gaussian(2, 1.0, 2.0)
    assert plain.pdf(1.0) == pytest.approx(1.0 / (2.0 * np.sqrt(2.0 * np.pi)))
