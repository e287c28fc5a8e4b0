"""Hyperparameter priors evaluated on the internal scale, Jacobians included."""

import numpy as np
from scipy import stats

from .model_core import HyperPrior, ModelSpec


def gamma_on_log_precision(theta, shape: float, rate: float):
    """Density of theta = log(tau) when tau ~ Gamma(shape, rate)"""
    theta = np.asarray(theta, dtype=float)
    return stats.gamma.logpdf(np.exp(theta), a=shape, scale=1.0 / rate) + theta


def wishart_internal_logdensity(theta: np.ndarray, df: float, scale) -> np.ndarray:
    """
    Log density of (theta1, theta2, theta3) implied by a Wishart prior on the
    2x2 precision W = Sigma^-1 with Sigma built from
    (log sigma0^-2, log sigma1^-2, log((1+rho)/(1-rho))).

    theta may be a single triple or an (N, 3) array.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    t1, t2, t3 = theta[:, 0], theta[:, 1], theta[:, 2]
    rho = np.tanh(0.5 * t3)
    log_q = -2.0 * np.log(np.cosh(0.5 * t3))  # log(1 - rho^2)
    c = np.exp(-log_q)
    off = -rho * np.exp(0.5 * (t1 + t2))
    W = np.empty((2, 2, len(t1)))
    W[0, 0] = c * np.exp(t1)
    W[1, 1] = c * np.exp(t2)
    W[0, 1] = W[1, 0] = c * off
    log_w = np.atleast_1d(stats.wishart.logpdf(W, df=df, scale=np.diag(scale)))
    # Sigma -> W contributes |Sigma|^-3; theta -> Sigma the triangular Jacobian
    log_jac = 1.5 * t1 + 1.5 * t2 - 2.0 * log_q - np.log(2.0)
    return log_w + log_jac


def log_prior_single(prior: HyperPrior, theta: np.ndarray) -> float:
    if prior.kind == "gamma":
        return float(gamma_on_log_precision(theta[prior.indices[0]], prior.shape, prior.rate))
    if prior.kind == "normal":
        return float(stats.norm.logpdf(theta[prior.indices[0]], loc=prior.mean,
                                       scale=np.sqrt(prior.variance)))
    return float(wishart_internal_logdensity(theta[list(prior.indices)], prior.df, prior.scale)[0])


def log_prior_hyper(spec: ModelSpec, theta) -> float:
    """Sum of log prior densities of all hyperparameters on the internal scale"""
    values = spec.check_theta(theta)
    return float(sum(log_prior_single(prior, values) for prior in spec.hyper_priors))
