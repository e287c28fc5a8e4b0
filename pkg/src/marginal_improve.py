"""
Improved marginals for the fixed effects: a Laplace-style marginal evaluated
on a grid around the Gaussian mean, summarized by a skew-normal with the
Gaussian variance kept unchanged.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, linalg

from .exceptions import MarginalFitError, ModelSpecError
from .gaussian_approx import GaussianApprox, conditional_mean_full, curvature_matrix
from .likelihoods import loglik_terms
from .model_core import ModelSpec, build_prior_precision
from .skew_normal import (MAX_SKEWNESS, location_scale, shape_from_skewness, sn_cdf,
                          sn_logpdf, sn_moments, sn_quantile)

logger = logging.getLogger(__name__)

GRID_HALF_WIDTH = 4.0
GRID_POINTS = 17
MIN_SUPPORT_POINTS = 3
SUPPORT_FRACTION = 0.01
# grid skewness below this is round-off from a symmetric integrand
SKEWNESS_FLOOR = 1e-9


@dataclass(frozen=True)
class SkewNormalMarginal:
    """
    Improved marginal of latent component `index` at one theta.

    gaussian_mean and sd come from the Gaussian approximation; improved_mean
    and shape from the grid fit. skewness is the clamped target.
    """
    index: int
    gaussian_mean: float
    improved_mean: float
    sd: float
    shape: float = 0.0
    skewness: float = 0.0

    @property
    def location(self) -> float:
        return location_scale(self.improved_mean, self.sd, self.shape)[0]

    @property
    def scale(self) -> float:
        return location_scale(self.improved_mean, self.sd, self.shape)[1]

    def _standard_arg(self, x):
        xi, omega = location_scale(self.improved_mean, self.sd, self.shape)
        return (np.asarray(x, dtype=float) - xi) / omega, omega

    def logpdf(self, x):
        z, omega = self._standard_arg(x)
        return sn_logpdf(z, self.shape) - np.log(omega)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        z, _ = self._standard_arg(x)
        return sn_cdf(z, self.shape)

    def quantile(self, p):
        xi, omega = location_scale(self.improved_mean, self.sd, self.shape)
        return xi + omega * np.asarray(sn_quantile(p, self.shape))

    def standardized_cdf(self, z):
        """CDF of (x - improved_mean) / sd"""
        return self.cdf(self.improved_mean + self.sd * np.asarray(z, dtype=float))

    def standardized_logpdf(self, z):
        return self.logpdf(self.improved_mean + self.sd * np.asarray(z, dtype=float)) + np.log(self.sd)

    def moments(self):
        """(mean, variance, skewness) of the represented skew-normal"""
        xi, omega = location_scale(self.improved_mean, self.sd, self.shape)
        m, v, g = sn_moments(self.shape)
        return xi + omega * m, omega * omega * v, g

    @classmethod
    def gaussian(cls, index: int, mean: float, sd: float) -> "SkewNormalMarginal":
        return cls(index=index, gaussian_mean=mean, improved_mean=mean, sd=sd)


def grid_offsets() -> np.ndarray:
    """Standardized abscissae -4, -3.5, ..., 4"""
    return np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, GRID_POINTS)


def laplace_log_marginal(spec: ModelSpec, ga: GaussianApprox, i: int, x_values: np.ndarray,
                         Q_prior: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Unnormalized log pi(x_i | theta, y) at each value: the joint at the
    Gaussian conditional mean minus log pi_G(x_-i | x_i) at that point, whose
    precision Q_-i,-i is rebuilt from the curvature at x.
    """
    y = spec.require_data()
    A = spec.design_matrix
    if Q_prior is None:
        Q_prior, _ = build_prior_precision(spec, ga.theta)
    m = spec.prior_mean
    points = conditional_mean_full(ga, i, np.asarray(x_values, dtype=float))
    e_i = np.zeros(spec.n_latent)
    e_i[i] = 1.0
    out = np.empty(len(points))
    for k, x in enumerate(points):
        r = x - m
        loglik, _, l2, _ = loglik_terms(spec, A @ x, y, validate=False)
        cho = linalg.cho_factor(curvature_matrix(spec, Q_prior, -l2), lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(cho[0])))
        # |Q_-i,-i| = |Q| * (Q^-1)_ii
        log_det_rest = log_det + np.log(linalg.cho_solve(cho, e_i)[i])
        out[k] = -0.5 * r @ Q_prior @ r + np.sum(loglik) - 0.5 * log_det_rest
    return out


def fit_grid_moments(offsets: np.ndarray, log_values: np.ndarray):
    """
    Trapezoid-normalized mean and standardized skewness of a density known
    on a grid of standardized offsets.

    Raises:
        MarginalFitError: fewer than 3 points carry 1% of the peak density
    """
    dens = np.exp(log_values - np.max(log_values))
    if np.count_nonzero(dens >= SUPPORT_FRACTION) < MIN_SUPPORT_POINTS:
        raise MarginalFitError(
            f"improved marginal grid mass sits on fewer than {MIN_SUPPORT_POINTS} points; "
            "the Gaussian standard deviation looks mis-scaled"
        )
    mass = integrate.trapezoid(dens, offsets)
    mean = integrate.trapezoid(offsets * dens, offsets) / mass
    centred = offsets - mean
    var = integrate.trapezoid(centred ** 2 * dens, offsets) / mass
    third = integrate.trapezoid(centred ** 3 * dens, offsets) / mass
    return float(mean), float(third / var ** 1.5)


def improved_marginal(spec: ModelSpec, theta, ga: GaussianApprox, i: int,
                      Q_prior: Optional[np.ndarray] = None) -> SkewNormalMarginal:
    """
    Skew-normal improved marginal of fixed effect i at theta.

    The Laplace marginal is evaluated at x_i = mu_i + s sigma_i for
    s = -4, -3.5, ..., 4; its grid mean becomes the improved mean, the grid
    skewness (clamped to 0.99) fixes the shape and the variance stays sigma_i^2.
    """
    values = spec.check_theta(theta)
    if i not in set(spec.fixed_index_set.tolist()):
        raise ModelSpecError(f"latent index {i} is not in the fixed-effect index set")
    if Q_prior is None:
        Q_prior, _ = build_prior_precision(spec, values)
    mu, sd = float(ga.mode[i]), float(ga.marginal_sd[i])
    offsets = grid_offsets()
    log_values = laplace_log_marginal(spec, ga, i, mu + sd * offsets, Q_prior)
    shift, gamma = fit_grid_moments(offsets, log_values)
    if abs(gamma) < SKEWNESS_FLOOR:
        gamma = 0.0
    clamped = float(np.clip(gamma, -MAX_SKEWNESS, MAX_SKEWNESS))
    if clamped != gamma:
        logger.warning(f"skewness {gamma:.4f} of marginal {i} clamped to {clamped}")
    return SkewNormalMarginal(
        index=int(i), gaussian_mean=mu, improved_mean=mu + sd * shift, sd=sd,
        shape=shape_from_skewness(clamped), skewness=clamped,
    )


def improved_marginals(spec: ModelSpec, theta, ga: GaussianApprox):
    """Improved marginals for every index of the fixed-effect set, in order"""
    Q_prior, _ = build_prior_precision(spec, theta)
    return [improved_marginal(spec, theta, ga, int(i), Q_prior) for i in spec.fixed_index_set]
