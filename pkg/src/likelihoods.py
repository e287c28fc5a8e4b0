"""Log-likelihood of one observation as a function of its linear predictor."""

from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, gammaln

from .exceptions import ModelSpecError


def check_support(spec, y: np.ndarray, trials: Optional[np.ndarray] = None):
    """Raise ModelSpecError when an observation is outside the family support"""
    y = np.asarray(y, dtype=float)
    kind = spec.likelihood.kind
    if not np.all(np.isfinite(y)):
        raise ModelSpecError("observations must be finite")
    if kind == "gaussian":
        return
    if np.any(y != np.round(y)) or np.any(y < 0):
        raise ModelSpecError(f"{kind} observations must be non-negative integers")
    if kind == "bernoulli" and np.any(y > 1):
        raise ModelSpecError("bernoulli observations must be 0 or 1")
    if kind == "binomial":
        m = spec.trials if trials is None else trials
        if np.any(y > m):
            raise ModelSpecError("binomial observations must lie in 0..m")


def loglik_terms(spec, eta, y, trials=None,
                 validate: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Value and first three derivatives of log pi(y_j | eta_j) with respect to eta_j.

    Args:
        spec: ModelSpec providing the likelihood family (and binomial trials)
        eta: linear predictor, scalar or array
        y: observation(s) aligned with eta
        trials: binomial trials aligned with eta, defaults to spec.trials
        validate: run the support check; disable once y is known to be valid

    Returns:
        (l, l1, l2, l3) arrays shaped like eta
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    family = spec.likelihood
    if validate:
        check_support(spec, y, trials)

    if family.kind in ("bernoulli", "binomial"):
        m = np.ones_like(eta) if family.kind == "bernoulli" else np.asarray(
            spec.trials if trials is None else trials, dtype=float)
        p = expit(eta)
        log_comb = gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)
        value = log_comb + y * eta - m * np.logaddexp(0.0, eta)
        pq = p * (1.0 - p)
        return value, y - m * p, -m * pq, -m * pq * (1.0 - 2.0 * p)

    if family.kind == "poisson":
        mu = np.exp(eta)
        value = y * eta - mu - gammaln(y + 1.0)
        return value, y - mu, -mu, -mu

    lam = family.precision
    resid = y - eta
    value = 0.5 * np.log(lam) - 0.5 * np.log(2.0 * np.pi) - 0.5 * lam * resid * resid
    return value, lam * resid, np.full_like(eta, -lam), np.zeros_like(eta)


def loglik_total(spec, eta: np.ndarray, y: np.ndarray) -> float:
    """Sum of log-likelihood contributions"""
    return float(np.sum(loglik_terms(spec, eta, y, validate=False)[0]))
