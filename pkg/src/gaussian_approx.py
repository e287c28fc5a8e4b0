"""
Gaussian approximation of pi(x | theta, y) found by matching the mode and
the curvature at the mode (damped Newton on the latent field).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from .exceptions import ConvergenceError
from .likelihoods import loglik_terms
from .model_core import ModelSpec, build_prior_precision

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-8
OBJECTIVE_TOL = 1e-12
MAX_ITERATIONS = 100
MAX_HALVINGS = 30


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """
    Gaussian approximation at one hyperparameter point.

    log_det is log|Q(theta)| (no factor 1/2); prior_log_det is log|Q_prior(theta)|.
    log_joint is log pi(mode | theta) + sum_j log pi(y_j | eta_j(mode)).
    """
    theta: np.ndarray
    mode: np.ndarray
    precision: np.ndarray
    cholesky: Tuple[np.ndarray, bool]
    log_det: float
    marginal_sd: np.ndarray
    prior_log_det: float = 0.0
    log_joint: float = 0.0
    iterations: int = 0

    @property
    def n(self) -> int:
        return len(self.mode)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Q^-1 rhs through the stored factorization"""
        return linalg.cho_solve(self.cholesky, rhs)

    @classmethod
    def from_precision(cls, precision: np.ndarray, mode: Optional[np.ndarray] = None,
                       theta: Optional[np.ndarray] = None) -> "GaussianApprox":
        """Wrap an explicit (mode, precision) pair, factorizing Q"""
        Q = np.asarray(precision, dtype=float)
        mu = np.zeros(len(Q)) if mode is None else np.asarray(mode, dtype=float)
        cho = linalg.cho_factor(Q, lower=True)
        sd = np.sqrt(_inverse_diagonal(cho, len(Q)))
        return cls(theta=np.zeros(0) if theta is None else np.asarray(theta, dtype=float),
                   mode=mu, precision=Q, cholesky=cho, log_det=_log_det(cho), marginal_sd=sd)


def _log_det(cho: Tuple[np.ndarray, bool]) -> float:
    return float(2.0 * np.sum(np.log(np.diag(cho[0]))))


def _inverse_diagonal(cho: Tuple[np.ndarray, bool], n: int) -> np.ndarray:
    return np.diag(linalg.cho_solve(cho, np.eye(n))).copy()


def marginal_variances(ga: GaussianApprox) -> np.ndarray:
    """sigma_i^2(theta): diagonal of Q(theta)^-1 via the Cholesky factor"""
    return _inverse_diagonal(ga.cholesky, ga.n)


def curvature_matrix(spec: ModelSpec, Q_prior: np.ndarray, neg_l2: np.ndarray) -> np.ndarray:
    """Q_prior + A' diag(-l'') A as a dense matrix"""
    A = spec.design_matrix
    return Q_prior + (A.T @ A.multiply(neg_l2[:, None])).toarray()


def log_joint_latent(spec: ModelSpec, x: np.ndarray, Q_prior: np.ndarray,
                     prior_log_det: float) -> float:
    """log pi(x | theta) + sum_j log pi(y_j | eta_j)"""
    y = spec.require_data()
    r = x - spec.prior_mean
    loglik = loglik_terms(spec, spec.design_matrix @ x, y, validate=False)[0]
    return float(0.5 * prior_log_det - 0.5 * r @ Q_prior @ r
                 - 0.5 * spec.n_latent * np.log(2.0 * np.pi) + np.sum(loglik))


def log_joint(spec: ModelSpec, x: np.ndarray, theta) -> float:
    """log pi(x, y | theta) at any latent vector"""
    Q_prior, prior_log_det = build_prior_precision(spec, theta)
    return log_joint_latent(spec, np.asarray(x, dtype=float), Q_prior, prior_log_det)


def gradient(spec: ModelSpec, x: np.ndarray, theta) -> np.ndarray:
    """Gradient of log pi(x, y | theta) with respect to x"""
    Q_prior, _ = build_prior_precision(spec, theta)
    x = np.asarray(x, dtype=float)
    l1 = loglik_terms(spec, spec.design_matrix @ x, spec.require_data(), validate=False)[1]
    return -Q_prior @ (x - spec.prior_mean) + spec.design_matrix.T @ l1


def fit_gaussian_approx(spec: ModelSpec, theta, warm_start: Optional[np.ndarray] = None) -> GaussianApprox:
    """
    Newton iterations on x -> log pi(x | theta, y) with step-halving.

    Converged when max|gradient| < 1e-8 or the relative objective change
    drops below 1e-12.

    Raises:
        ConvergenceError: no convergence after 100 iterations
    """
    values = spec.check_theta(theta)
    y = spec.require_data()
    A = spec.design_matrix
    Q_prior, prior_log_det = build_prior_precision(spec, values)
    m = spec.prior_mean

    def objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        r = x - m
        terms = loglik_terms(spec, A @ x, y, validate=False)
        return float(-0.5 * r @ Q_prior @ r + np.sum(terms[0])), r

    x = m.copy() if warm_start is None else np.array(warm_start, dtype=float)
    f, r = objective(x)
    grad_norm = np.inf
    iterations = 0
    converged = False
    while iterations < MAX_ITERATIONS:
        _, l1, l2, _ = loglik_terms(spec, A @ x, y, validate=False)
        grad = -Q_prior @ r + A.T @ l1
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < GRADIENT_TOL:
            converged = True
            break
        try:
            cho = linalg.cho_factor(curvature_matrix(spec, Q_prior, -l2), lower=True)
        except linalg.LinAlgError as exc:
            raise AssertionError(
                f"curvature matrix not positive definite at theta={values.tolist()}") from exc
        step = linalg.cho_solve(cho, grad)
        iterations += 1

        t = 1.0
        for _ in range(MAX_HALVINGS):
            x_new = x + t * step
            f_new, r_new = objective(x_new)
            if f_new >= f:
                break
            t *= 0.5
        else:
            # no ascent left at machine precision
            converged = True
            break
        change = abs(f_new - f) / max(1.0, abs(f))
        x, f, r = x_new, f_new, r_new
        if change < OBJECTIVE_TOL:
            converged = True
            break

    if not converged:
        logger.warning(f"Newton did not converge at theta={values.tolist()}, "
                       f"|grad|={grad_norm:.3e}")
        raise ConvergenceError(
            f"Gaussian approximation did not converge in {MAX_ITERATIONS} iterations "
            f"(theta={values.tolist()}, gradient norm {grad_norm:.3e})",
            theta=values, gradient_norm=grad_norm,
        )

    _, _, l2, _ = loglik_terms(spec, A @ x, y, validate=False)
    Q = curvature_matrix(spec, Q_prior, -l2)
    try:
        cho = linalg.cho_factor(Q, lower=True)
    except linalg.LinAlgError as exc:
        raise AssertionError(
            f"curvature matrix not positive definite at theta={values.tolist()}") from exc
    sd = np.sqrt(_inverse_diagonal(cho, len(x)))
    return GaussianApprox(
        theta=values, mode=x, precision=Q, cholesky=cho, log_det=_log_det(cho),
        marginal_sd=sd, prior_log_det=prior_log_det,
        log_joint=log_joint_latent(spec, x, Q_prior, prior_log_det), iterations=iterations,
    )


def conditional_mean_full(ga: GaussianApprox, i: int, x_i) -> np.ndarray:
    """
    E_G[x | x_i] for one or several values of x_i; rows index the values.
    Uses one solve against the existing factorization.
    """
    e = np.zeros(ga.n)
    e[i] = 1.0
    column = ga.solve(e)
    slope = column / column[i]
    shifts = np.atleast_1d(np.asarray(x_i, dtype=float)) - ga.mode[i]
    full = ga.mode[None, :] + shifts[:, None] * slope[None, :]
    full[:, i] = ga.mode[i] + shifts
    return full if np.ndim(x_i) else full[0]


def conditional_mean_given_one(ga: GaussianApprox, i: int, x_i: float) -> np.ndarray:
    """E_G[x_-i | x_i] = mu_-i - Q_-i,-i^-1 Q_-i,i (x_i - mu_i), an (n-1)-vector"""
    return np.delete(conditional_mean_full(ga, i, float(x_i)), i)
