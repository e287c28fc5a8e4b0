import numpy as np
import pytest
from scipy import integrate, stats

from src.skew_normal import (MAX_SKEWNESS, location_scale, shape_from_skewness, sn_cdf, sn_logpdf,
                             sn_moments, sn_pdf, sn_quantile)


def test_zero_shape_reduces_to_normal():
    z = np.array([-2.0, 0.0, 2.0])
    np.testing.assert_allclose(sn_cdf(z, 0.0), stats.norm.cdf(z), atol=1e-12)
    np.testing.assert_allclose(sn_logpdf(z, 0.0), stats.norm.logpdf(z), atol=1e-12)


def test_cdf_at_zero():
    assert sn_cdf(0.0, 1.0) == pytest.approx(0.25, abs=1e-12)
    for alpha in (-3.0, 0.5, 4.0):
        assert sn_cdf(0.0, alpha) == pytest.approx(0.5 - np.arctan(alpha) / np.pi, abs=1e-12)


def test_matches_scipy_skewnorm():
    z = np.linspace(-3.0, 3.0, 13)
    for alpha in (-2.0, 0.7, 5.0):
        np.testing.assert_allclose(sn_cdf(z, alpha), stats.skewnorm.cdf(z, alpha), atol=1e-10)
        np.testing.assert_allclose(sn_pdf(z, alpha), stats.skewnorm.pdf(z, alpha), rtol=1e-10)


@pytest.mark.parametrize("alpha", [-6.0, -1.0, 0.0, 0.3, 2.0, 10.0])
def test_quantile_inverts_cdf(alpha):
    for z in (-2.5, -0.7, 0.0, 0.4, 1.9):
        p = float(sn_cdf(z, alpha))
        if 1e-6 < p < 1.0 - 1e-6:
            assert sn_quantile(p, alpha) == pytest.approx(z, abs=1e-8)
    probs = np.array([0.025, 0.5, 0.975])
    q = sn_quantile(probs, alpha)
    np.testing.assert_allclose(sn_cdf(q, alpha), probs, atol=1e-10)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.2])
def test_quantile_outside_unit_interval(p):
    with pytest.raises(ValueError):
        sn_quantile(p, 1.0)


def test_cdf_monotone_with_unit_mass():
    z = np.linspace(-8.0, 8.0, 2001)
    for alpha in (-4.0, 0.0, 1.5):
        assert np.all(np.diff(sn_cdf(z, alpha)) >= 0)
        mass, _ = integrate.quad(lambda t: float(sn_pdf(t, alpha)), -np.inf, np.inf, epsabs=1e-13)
        assert mass == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("gamma", [-0.9, -0.25, 0.05, 0.5, 0.95])
def test_shape_reproduces_skewness(gamma):
    alpha = shape_from_skewness(gamma)
    assert sn_moments(alpha)[2] == pytest.approx(gamma, abs=1e-10)
    assert np.sign(alpha) == np.sign(gamma)


def test_skewness_is_clamped():
    assert sn_moments(shape_from_skewness(1.5))[2] == pytest.approx(MAX_SKEWNESS, abs=1e-10)
    assert sn_moments(shape_from_skewness(-1.5))[2] == pytest.approx(-MAX_SKEWNESS, abs=1e-10)
    assert shape_from_skewness(0.0) == 0.0


def test_location_scale_pins_mean_and_sd():
    for alpha in (-3.0, 0.0, 2.5):
        xi, omega = location_scale(1.2, 0.4, alpha)
        mean, var, _ = stats.skewnorm.stats(alpha, loc=xi, scale=omega, moments="mvs")
        assert float(mean) == pytest.approx(1.2, abs=1e-10)
        assert float(var) == pytest.approx(0.16, abs=1e-10)
