"""
Copula correction of the Laplace hyperparameter posterior, restricted to the
fixed effects: the mean-only term, the mean-and-skewness term and the soft
threshold that bounds both.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from .exceptions import ModelSpecError, SingularFixedEffectsError
from .gaussian_approx import GaussianApprox
from .marginal_improve import SkewNormalMarginal

logger = logging.getLogger(__name__)

CORRECTION_MODES = (None, "mean", "skew")
CONDITION_LIMIT = 1e12
PROBABILITY_CLAMP = 1e-12

_MODE_ALIASES = {
    None: None, "none": None, "None": None,
    "mean": "mean", "mean_only": "mean", "MeanOnly": "mean",
    "skew": "skew", "mean_and_skew": "skew", "MeanAndSkew": "skew",
}


@dataclass(frozen=True)
class CorrectionConfig:
    """Which correction to apply (None, 'mean' or 'skew') and the threshold scale xi"""
    mode: Optional[str] = "mean"
    xi: float = 10.0

    def __post_init__(self):
        if self.mode not in _MODE_ALIASES:
            raise ModelSpecError(f"unknown correction mode '{self.mode}'")
        object.__setattr__(self, "mode", _MODE_ALIASES[self.mode])
        if not self.xi > 0:
            raise ModelSpecError(f"xi must be positive, got {self.xi}")

    @property
    def enabled(self) -> bool:
        return self.mode is not None

    @property
    def label(self) -> str:
        return self.mode or "none"

    @classmethod
    def from_settings(cls, settings: Dict, mode: Optional[str] = "default",
                      xi: Optional[float] = None) -> "CorrectionConfig":
        section = settings.get("correction", {})
        chosen = section.get("mode", "mean") if mode == "default" else mode
        return cls(mode=chosen, xi=float(section.get("xi", 10.0) if xi is None else xi))


@dataclass(frozen=True)
class CorrectionResult:
    """
    raw is C (mean) or C_skew (skew); thresholded is u * tanh(raw / u).
    contributions split raw per fixed effect; clamped marks a probability
    clamp inside the skew term.
    """
    mode: Optional[str] = None
    raw: float = 0.0
    thresholded: float = 0.0
    u: float = 0.0
    contributions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    clamped: bool = False


def fixed_effect_precision(ga: GaussianApprox, index_set: Sequence[int]) -> np.ndarray:
    """
    Q_J = (Sigma_J)^-1 where Sigma_J is the J-block of Q^-1, found from one
    solve of Q S = E_J.

    Raises:
        SingularFixedEffectsError: Sigma_J condition number above 1e12
    """
    J = np.asarray(index_set, dtype=int)
    if J.size == 0:
        raise ModelSpecError("fixed-effect index set is empty")
    E = np.zeros((ga.n, J.size))
    E[J, np.arange(J.size)] = 1.0
    sigma_J = ga.solve(E)[J]
    sigma_J = 0.5 * (sigma_J + sigma_J.T)
    condition = float(np.linalg.cond(sigma_J))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularFixedEffectsError(
            f"fixed-effect covariance is numerically singular (condition {condition:.3e}); "
            "check for collinear fixed effects", condition=condition,
        )
    Q_J = linalg.cho_solve(linalg.cho_factor(sigma_J, lower=True), np.eye(J.size))
    return 0.5 * (Q_J + Q_J.T)


def correction_mean_only(mu: np.ndarray, mu_tilde: np.ndarray, Q_J: np.ndarray) -> float:
    """C = 1/2 (mu - mu_tilde)' Q_J (mu - mu_tilde)"""
    d = np.asarray(mu, dtype=float) - np.asarray(mu_tilde, dtype=float)
    Q_J = np.atleast_2d(Q_J)
    if Q_J.shape != (d.size, d.size):
        raise ModelSpecError(f"precision shape {Q_J.shape} does not match {d.size} effects")
    return max(0.0, float(0.5 * d @ Q_J @ d))


def mean_only_contributions(mu: np.ndarray, mu_tilde: np.ndarray, Q_J: np.ndarray) -> np.ndarray:
    d = np.asarray(mu, dtype=float) - np.asarray(mu_tilde, dtype=float)
    return 0.5 * d * (np.atleast_2d(Q_J) @ d)


def soft_threshold(C, n_f: int, xi: float):
    """C_t = u f(C / u) with f(t) = 2 / (1 + exp(-2t)) - 1 = tanh(t), u = n_f xi"""
    if n_f < 1 or not xi > 0:
        raise ModelSpecError("soft threshold needs n_f >= 1 and xi > 0")
    u = n_f * xi
    return u * np.tanh(np.asarray(C, dtype=float) / u)


def correction_skew(ga: GaussianApprox, marginals: Sequence[SkewNormalMarginal],
                    Q_J: np.ndarray) -> Tuple[float, np.ndarray, bool]:
    """
    Mean-and-skewness correction C_skew on the fixed effects.

    Each standardized skew-normal is evaluated at z_i = (mu_i - mu_tilde_i) / sigma_i;
    F(z_i) is clamped to [1e-12, 1 - 1e-12] before Phi^-1.

    Returns:
        (C_skew, per-effect contributions, clamped flag)
    """
    sigma = np.array([m.sd for m in marginals])
    mu = np.array([ga.mode[m.index] for m in marginals])
    mu_tilde = np.array([m.improved_mean for m in marginals])
    z = (mu - mu_tilde) / sigma
    probs = np.array([float(m.standardized_cdf(zi)) for m, zi in zip(marginals, z)])
    clamped = bool(np.any(probs < PROBABILITY_CLAMP) or np.any(probs > 1.0 - PROBABILITY_CLAMP))
    if clamped:
        logger.warning(f"skew correction clamped probabilities {probs.tolist()}")
    q = stats.norm.ppf(np.clip(probs, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))
    log_f = np.array([float(m.standardized_logpdf(zi)) for m, zi in zip(marginals, z)])
    w = sigma * q
    quad = 0.5 * w * (np.atleast_2d(Q_J) @ w)
    contributions = quad + log_f - stats.norm.logpdf(q)
    return float(np.sum(contributions)), contributions, clamped


def compute_correction(ga: GaussianApprox, marginals: Sequence[SkewNormalMarginal],
                       cfg: CorrectionConfig, Q_J: Optional[np.ndarray] = None) -> CorrectionResult:
    """Raw and thresholded correction at one theta for the configured mode"""
    n_f = len(marginals)
    u = n_f * cfg.xi
    if not cfg.enabled or n_f == 0:
        return CorrectionResult(mode=cfg.mode, u=u)
    if Q_J is None:
        Q_J = fixed_effect_precision(ga, [m.index for m in marginals])
    if cfg.mode == "mean":
        mu = np.array([ga.mode[m.index] for m in marginals])
        mu_tilde = np.array([m.improved_mean for m in marginals])
        raw = correction_mean_only(mu, mu_tilde, Q_J)
        contributions, clamped = mean_only_contributions(mu, mu_tilde, Q_J), False
    else:
        raw, contributions, clamped = correction_skew(ga, marginals, Q_J)
    return CorrectionResult(
        mode=cfg.mode, raw=raw, thresholded=float(soft_threshold(raw, n_f, cfg.xi)), u=u,
        contributions=contributions, clamped=clamped,
    )
