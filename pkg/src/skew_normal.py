"""
Standardized skew-normal distribution: density, CDF via Owen's T, quantile,
moments and the moment-to-shape map used when fitting improved marginals.
"""

from typing import Tuple

import numpy as np
from scipy import optimize, special, stats

B = np.sqrt(2.0 / np.pi)
MAX_SKEWNESS = 0.99
QUANTILE_TOL = 1e-10


def delta_from_shape(alpha):
    alpha = np.asarray(alpha, dtype=float)
    return alpha / np.sqrt(1.0 + alpha * alpha)


def sn_logpdf(z, alpha: float):
    """log(2 phi(z) Phi(alpha z))"""
    z = np.asarray(z, dtype=float)
    return np.log(2.0) + stats.norm.logpdf(z) + special.log_ndtr(alpha * z)


def sn_pdf(z, alpha: float):
    return np.exp(sn_logpdf(z, alpha))


def sn_cdf(z, alpha: float):
    """Phi(z) - 2 T(z, alpha)"""
    z = np.asarray(z, dtype=float)
    value = special.ndtr(z) - 2.0 * special.owens_t(z, alpha)
    return np.clip(value, 0.0, 1.0)


def _quantile_scalar(p: float, alpha: float) -> float:
    if alpha == 0.0:
        return float(special.ndtri(p))
    # SN(alpha) lies between N(0,1) and the half-normal on the side of alpha
    if alpha > 0:
        lo, hi = special.ndtri(p), special.ndtri(0.5 * (1.0 + p))
    else:
        lo, hi = special.ndtri(0.5 * p), special.ndtri(p)
    pad = 1e-8 * (1.0 + abs(lo) + abs(hi))
    lo, hi = lo - pad, hi + pad
    q = optimize.brentq(lambda t: float(sn_cdf(t, alpha)) - p, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    # Newton polish on the residual
    for _ in range(3):
        resid = float(sn_cdf(q, alpha)) - p
        if abs(resid) < QUANTILE_TOL * 1e-2:
            break
        dens = float(sn_pdf(q, alpha))
        if dens <= 0:
            break
        step = q - resid / dens
        if lo <= step <= hi:
            q = step
    return float(q)


def sn_quantile(p, alpha: float):
    """
    Inverse of sn_cdf by bracketed root finding.

    Raises:
        ValueError: p outside (0, 1)
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0.0)) or np.any(~(p_arr < 1.0)):
        raise ValueError("quantile probability must lie strictly between 0 and 1")
    if p_arr.ndim == 0:
        return _quantile_scalar(float(p_arr), float(alpha))
    return np.array([_quantile_scalar(float(v), float(alpha)) for v in p_arr.ravel()]).reshape(p_arr.shape)


def sn_moments(alpha: float) -> Tuple[float, float, float]:
    """Mean, variance and skewness of the standardized SN(0, 1, alpha)"""
    bd = B * float(delta_from_shape(alpha))
    var = 1.0 - bd * bd
    skew = 0.5 * (4.0 - np.pi) * bd ** 3 / var ** 1.5
    return bd, var, float(skew)


def shape_from_skewness(gamma: float) -> float:
    """
    Closed-form inverse of the skewness of SN(alpha); |gamma| is first
    clamped to 0.99.
    """
    g = float(np.clip(gamma, -MAX_SKEWNESS, MAX_SKEWNESS))
    if g == 0.0:
        return 0.0
    r = (2.0 * abs(g) / (4.0 - np.pi)) ** (1.0 / 3.0)
    delta = np.sign(g) * r / (B * np.sqrt(1.0 + r * r))
    return float(delta / np.sqrt(1.0 - delta * delta))


def location_scale(mean: float, sd: float, alpha: float) -> Tuple[float, float]:
    """
    Location xi and scale omega of the SN whose mean and standard deviation
    are (mean, sd) for the given shape.
    """
    bd = B * float(delta_from_shape(alpha))
    omega = sd / np.sqrt(1.0 - bd * bd)
    return float(mean - omega * bd), float(omega)
