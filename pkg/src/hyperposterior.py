"""
Laplace approximation of pi(theta | y), optionally corrected, explored on a
grid in standardized coordinates and integrated into posterior marginals
for the hyperparameters and the latent field.
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, interpolate, optimize, stats

from .copula_correction import CorrectionConfig, CorrectionResult, compute_correction
from .exceptions import (ConvergenceError, ExplorationError, MarginalFitError, ModelSpecError,
                         SingularFixedEffectsError)
from .gaussian_approx import GaussianApprox, fit_gaussian_approx
from .marginal_improve import SkewNormalMarginal, improved_marginal
from .model_core import ModelSpec, build_prior_precision
from .priors import log_prior_hyper

logger = logging.getLogger(__name__)

VARIANTS = ("uncorrected", "corrected")
LATENT_GRID_POINTS = 400
LATENT_ENVELOPE = 5.0
MODE_SEARCH_PENALTY = 1e10
MAX_WALK_STEPS = 60

_EVALUATION_ERRORS = (ConvergenceError, MarginalFitError, SingularFixedEffectsError)


@dataclass(frozen=True)
class ExplorationConfig:
    """Tuning of the theta-space exploration"""
    fd_step: float = 1e-4
    hessian_step: float = 1e-2
    dz: float = 0.75
    dpi: float = 4.5
    axis_cap: int = 9
    max_points: int = 10000
    fine_points: int = 200
    threads: int = 1

    @classmethod
    def from_settings(cls, settings: Dict, threads: Optional[int] = None) -> "ExplorationConfig":
        section = settings.get("exploration", {})
        runtime = settings.get("runtime", {})
        return cls(
            fd_step=float(section.get("fd_step", 1e-4)),
            hessian_step=float(section.get("hessian_step", 1e-2)),
            dz=float(section.get("dz", 0.75)),
            dpi=float(section.get("dpi", 4.5)),
            axis_cap=int(section.get("axis_cap", 9)),
            max_points=int(section.get("max_points", 10000)),
            fine_points=int(section.get("fine_points", 200)),
            threads=int(threads if threads is not None else runtime.get("threads", 1)),
        )


@dataclass(frozen=True, eq=False)
class GridPoint:
    """Everything computed at one explored theta"""
    theta: np.ndarray
    log_post_uncorrected: float
    correction: CorrectionResult
    log_post: float
    mean: np.ndarray
    sd: np.ndarray
    marginals: Tuple[SkewNormalMarginal, ...] = ()
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def correction_value(self) -> float:
        return self.correction.thresholded

    def log_posterior(self, variant: str = "corrected") -> float:
        return self.log_post if variant == "corrected" else self.log_post_uncorrected

    def marginal_for(self, i: int) -> Optional[SkewNormalMarginal]:
        for m in self.marginals:
            if m.index == i:
                return m
        return None


@dataclass(frozen=True, eq=False)
class PosteriorMarginal:
    """Density on an abscissa grid, normalized by the trapezoid rule on construction"""
    x: np.ndarray
    density: np.ndarray
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        dens = np.clip(np.asarray(self.density, dtype=float), 0.0, None)
        mass = integrate.trapezoid(dens, x)
        if not mass > 0 or not np.isfinite(mass):
            raise ExplorationError(f"marginal '{self.name}' has no mass on its grid")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "density", dens / mass)

    @property
    def mean(self) -> float:
        return float(integrate.trapezoid(self.x * self.density, self.x))

    @property
    def sd(self) -> float:
        var = integrate.trapezoid((self.x - self.mean) ** 2 * self.density, self.x)
        return float(np.sqrt(max(var, 0.0)))

    def cdf_values(self) -> np.ndarray:
        cum = integrate.cumulative_trapezoid(self.density, self.x, initial=0.0)
        return cum / cum[-1]

    def quantile(self, p):
        cum = self.cdf_values()
        # strictly increasing knots for interpolation
        keep = np.concatenate([[True], np.diff(cum) > 0])
        return np.interp(p, cum[keep], self.x[keep])

    def summary(self) -> Dict[str, float]:
        q = self.quantile([0.025, 0.5, 0.975])
        return {"mean": self.mean, "sd": self.sd, "q025": float(q[0]),
                "q50": float(q[1]), "q975": float(q[2])}

    def transformed(self, g: Callable[[np.ndarray], np.ndarray]) -> Dict[str, float]:
        """Summaries of g(X) for a monotone g, integrated on the same grid"""
        gx = g(self.x)
        mean = float(integrate.trapezoid(gx * self.density, self.x))
        var = float(integrate.trapezoid((gx - mean) ** 2 * self.density, self.x))
        q = g(np.asarray(self.quantile([0.025, 0.5, 0.975])))
        if gx[-1] < gx[0]:
            q = g(np.asarray(self.quantile([0.975, 0.5, 0.025])))
        return {"mean": mean, "sd": float(np.sqrt(max(var, 0.0))), "q025": float(q[0]),
                "q50": float(q[1]), "q975": float(q[2])}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"abscissa": self.x, "density": self.density})

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.12g")


@dataclass(frozen=True, eq=False)
class HyperPosterior:
    """
    Explored hyperparameter grid. volumes are the cell volumes in
    standardized coordinates; z_to_theta maps z to theta - mode.
    """
    spec: ModelSpec
    cfg: CorrectionConfig
    points: Tuple[GridPoint, ...]
    mode: np.ndarray
    hessian: np.ndarray
    volumes: np.ndarray
    z_to_theta: np.ndarray
    exploration: ExplorationConfig = ExplorationConfig()
    diagnostics: Dict = field(default_factory=dict)

    @property
    def n_hyper(self) -> int:
        return len(self.mode)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([pt.theta for pt in self.points]).reshape(len(self.points), self.n_hyper)

    def log_posteriors(self, variant: str = "corrected") -> np.ndarray:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant '{variant}'")
        return np.array([pt.log_posterior(variant) for pt in self.points])

    def weights(self, variant: str = "corrected") -> np.ndarray:
        lp = self.log_posteriors(variant)
        w = np.exp(lp - lp.max()) * self.volumes
        return w / w.sum()

    def log_normalizer(self, variant: str = "corrected") -> float:
        """log of sum exp(lp) times the cell volume in theta units"""
        lp = self.log_posteriors(variant)
        jac = abs(np.linalg.det(self.z_to_theta)) if self.n_hyper else 1.0
        top = lp.max()
        return float(top + np.log(np.sum(np.exp(lp - top) * self.volumes) * jac))

    @property
    def grid(self) -> List[Tuple[np.ndarray, float, float, float, float]]:
        """(theta, uncorrected log posterior, C_t, corrected log posterior, weight) per point"""
        w = self.weights("corrected")
        return [(pt.theta, pt.log_post_uncorrected, pt.correction_value, pt.log_post, float(wk))
                for pt, wk in zip(self.points, w)]

    def argmax(self, variant: str = "corrected") -> np.ndarray:
        return self.points[int(np.argmax(self.log_posteriors(variant)))].theta

    def to_frame(self) -> pd.DataFrame:
        thetas = self.thetas
        frame = pd.DataFrame({name: thetas[:, k] for k, name in enumerate(self.spec.hyper_names)})
        frame["log_post_uncorrected"] = self.log_posteriors("uncorrected")
        frame["correction_raw"] = [pt.correction.raw for pt in self.points]
        frame["correction"] = [pt.correction_value for pt in self.points]
        frame["log_post"] = self.log_posteriors("corrected")
        frame["weight_uncorrected"] = self.weights("uncorrected")
        frame["weight"] = self.weights("corrected")
        return frame


def evaluate_point(spec: ModelSpec, theta, cfg: CorrectionConfig,
                   warm_start: Optional[np.ndarray] = None,
                   improve: bool = True) -> Tuple[GridPoint, GaussianApprox]:
    """
    Gaussian approximation, improved fixed-effect marginals and correction at
    one theta. Marginals are skipped when improve is False and the
    correction is disabled.
    """
    values = spec.check_theta(theta)
    ga = fit_gaussian_approx(spec, values, warm_start=warm_start)
    # log pi_G at its own mode
    log_gauss = 0.5 * ga.log_det - 0.5 * spec.n_latent * np.log(2.0 * np.pi)
    uncorrected = log_prior_hyper(spec, values) + ga.log_joint - log_gauss

    marginals: Tuple[SkewNormalMarginal, ...] = ()
    if improve or cfg.enabled:
        Q_prior, _ = build_prior_precision(spec, values)
        marginals = tuple(improved_marginal(spec, values, ga, int(i), Q_prior)
                          for i in spec.fixed_index_set)
    correction = compute_correction(ga, marginals, cfg)
    point = GridPoint(
        theta=values, log_post_uncorrected=float(uncorrected), correction=correction,
        log_post=float(uncorrected + correction.thresholded), mean=ga.mode,
        sd=ga.marginal_sd, marginals=marginals,
    )
    return point, ga


def log_posterior_at(spec: ModelSpec, theta, cfg: CorrectionConfig,
                     warm_start: Optional[np.ndarray] = None) -> Tuple[float, float, float]:
    """
    (uncorrected log density, C_t, corrected log density) of theta given y.

    The uncorrected value is log pi(theta) + log pi(mu | theta) + sum l(eta(mu))
    - log pi_G(mu | theta, y); C_t is zero when the correction is disabled.
    """
    point, _ = evaluate_point(spec, theta, cfg, warm_start=warm_start, improve=False)
    return point.log_post_uncorrected, point.correction_value, point.log_post


def _single_point(spec: ModelSpec, cfg: CorrectionConfig, exploration: ExplorationConfig) -> HyperPosterior:
    point, _ = evaluate_point(spec, np.zeros(0), cfg)
    return HyperPosterior(spec=spec, cfg=cfg, points=(point,), mode=np.zeros(0),
                          hessian=np.zeros((0, 0)), volumes=np.ones(1),
                          z_to_theta=np.zeros((0, 0)), exploration=exploration,
                          diagnostics={"mode_search": "no hyperparameters"})


def _central_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        grad[k] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return grad


def finite_difference_hessian(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of f at theta"""
    p = len(theta)
    H = np.zeros((p, p))
    f0 = f(theta)
    eye = np.eye(p) * h
    for j in range(p):
        H[j, j] = (f(theta + eye[j]) - 2.0 * f0 + f(theta - eye[j])) / (h * h)
        for k in range(j):
            value = (f(theta + eye[j] + eye[k]) - f(theta + eye[j] - eye[k])
                     - f(theta - eye[j] + eye[k]) + f(theta - eye[j] - eye[k])) / (4.0 * h * h)
            H[j, k] = H[k, j] = value
    return H


def _cell_widths(levels: np.ndarray) -> np.ndarray:
    if len(levels) == 1:
        return np.ones(1)
    mids = 0.5 * (levels[1:] + levels[:-1])
    edges = np.concatenate([[levels[0] - (mids[0] - levels[0])], mids,
                            [levels[-1] + (levels[-1] - mids[-1])]])
    return np.diff(edges)


def explore(spec: ModelSpec, cfg: CorrectionConfig,
            exploration: Optional[ExplorationConfig] = None) -> HyperPosterior:
    """
    Find the mode of the (corrected) log posterior, walk each standardized
    axis until the density drops by dpi and evaluate the product grid.
    Grid points whose evaluation fails are left out of the weights and
    listed in diagnostics["failed_points"].

    Raises:
        ExplorationError: more than max_points grid points, p > 3, or no
            grid point could be evaluated
    """
    exploration = exploration or ExplorationConfig()
    started = time.perf_counter()
    p = spec.n_hyper
    if p > 3:
        raise ExplorationError(f"exploration supports at most 3 hyperparameters, model has {p}")
    if p == 0:
        return _single_point(spec, cfg, exploration)

    state = {"warm": None}

    def log_post(theta: np.ndarray) -> float:
        try:
            point, ga = evaluate_point(spec, theta, cfg, warm_start=state["warm"], improve=False)
        except _EVALUATION_ERRORS as exc:
            logger.debug(f"evaluation failed at theta={np.round(theta, 4).tolist()}: {exc}")
            return -MODE_SEARCH_PENALTY
        return point.log_post

    def objective(theta: np.ndarray) -> float:
        return -log_post(theta)

    start = np.asarray(spec.initial_hyper, dtype=float)
    result = optimize.minimize(
        objective, start, method="BFGS",
        jac=lambda t: _central_gradient(objective, t, exploration.fd_step),
        options={"gtol": 1e-5, "maxiter": 200},
    )
    mode = np.asarray(result.x, dtype=float)
    diagnostics = {"mode_search": result.message, "mode_iterations": int(result.nit),
                   "mode_success": bool(result.success)}
    if not result.success:
        logger.warning(f"mode search stopped early: {result.message}")
    mode_point, mode_ga = evaluate_point(spec, mode, cfg, improve=False)
    state["warm"] = mode_ga.mode
    logger.info(f"mode {np.round(mode, 4).tolist()} after {result.nit} iterations, "
                f"log posterior {mode_point.log_post:.4f}")

    hessian = finite_difference_hessian(objective, mode, exploration.hessian_step)
    eigvals, eigvecs = np.linalg.eigh(hessian)
    floor = 1e-6 * max(float(eigvals.max()), 1.0)
    if np.any(eigvals <= floor):
        logger.warning(f"hessian at mode not positive definite: {eigvals.tolist()}")
        eigvals = np.maximum(eigvals, floor)
    z_to_theta = eigvecs @ np.diag(1.0 / np.sqrt(eigvals))

    top = mode_point.log_post
    axis_levels = []
    for k in range(p):
        reach = []
        for sign in (-1.0, 1.0):
            steps = 0
            while True:
                steps += 1
                if steps > MAX_WALK_STEPS:
                    raise ExplorationError(f"axis {k} did not drop by {exploration.dpi} "
                                           f"within {MAX_WALK_STEPS} steps; model too diffuse")
                z = np.zeros(p)
                z[k] = sign * steps * exploration.dz
                if top - log_post(mode + z_to_theta @ z) > exploration.dpi:
                    break
            reach.append(steps)
        down, up = reach
        if p == 3 and down + up + 1 > exploration.axis_cap:
            half = exploration.axis_cap // 2
            step = exploration.dz * max(down, up) / half
            levels = step * np.arange(-half, half + 1)
        else:
            levels = exploration.dz * np.arange(-down, up + 1)
        axis_levels.append(levels)

    size = int(np.prod([len(lv) for lv in axis_levels]))
    if size > exploration.max_points:
        raise ExplorationError(f"grid of {size} points exceeds the cap of {exploration.max_points}")
    zs = [np.array(z) for z in itertools.product(*axis_levels)]
    widths = [_cell_widths(lv) for lv in axis_levels]
    volumes = np.array([
        np.prod([widths[k][int(np.searchsorted(axis_levels[k], z[k]))] for k in range(p)])
        for z in zs
    ])

    warm = mode_ga.mode

    def evaluate(z: np.ndarray) -> Optional[GridPoint]:
        theta = mode + z_to_theta @ z
        try:
            point, _ = evaluate_point(spec, theta, cfg, warm_start=warm)
        except _EVALUATION_ERRORS as exc:
            logger.warning(f"dropping grid point theta={np.round(theta, 4).tolist()}: "
                           f"{type(exc).__name__}: {exc}")
            return None
        return replace(point, z=z)

    if exploration.threads > 1:
        with ThreadPoolExecutor(max_workers=exploration.threads) as pool:
            evaluated = list(pool.map(evaluate, zs))
    else:
        evaluated = [evaluate(z) for z in zs]

    kept = [k for k, pt in enumerate(evaluated) if pt is not None]
    if not kept:
        raise ExplorationError(f"every one of the {len(zs)} grid points failed to evaluate")
    points = tuple(evaluated[k] for k in kept)
    volumes = volumes[kept]
    diagnostics["failed_points"] = [(mode + z_to_theta @ z).tolist()
                                    for z, pt in zip(zs, evaluated) if pt is None]
    diagnostics["grid_points"] = len(points)
    diagnostics["seconds"] = time.perf_counter() - started
    logger.info(f"explored {len(points)} grid points in {diagnostics['seconds']:.2f}s")
    return HyperPosterior(spec=spec, cfg=cfg, points=points, mode=mode, hessian=hessian,
                          volumes=volumes, z_to_theta=z_to_theta, exploration=exploration,
                          diagnostics=diagnostics)


def _widened_points(hp: HyperPosterior) -> HyperPosterior:
    """Re-explore a degenerate one-dimensional grid at dz spacing over +-4 standard deviations"""
    scale = float(hp.z_to_theta[0, 0]) if hp.z_to_theta.size else 1.0
    levels = hp.exploration.dz * np.arange(-6, 7)
    points = []
    for z in levels:
        point, _ = evaluate_point(hp.spec, hp.mode + scale * np.array([z]), hp.cfg)
        points.append(replace(point, z=np.array([z])))
    logger.info(f"widened degenerate hyperparameter grid to {len(points)} points")
    return replace(hp, points=tuple(points), volumes=_cell_widths(levels))


def _log_quadratic_marginal(centres: np.ndarray, mass: np.ndarray, fine: np.ndarray) -> np.ndarray:
    """Weighted polynomial fit to log mass, cubic once five bins carry mass"""
    keep = mass > 0
    x, m = centres[keep], mass[keep]
    if len(x) < 3:
        mean = np.sum(x * m) / np.sum(m)
        sd = np.sqrt(max(np.sum((x - mean) ** 2 * m) / np.sum(m), 1e-12))
        return stats.norm.logpdf(fine, loc=mean, scale=sd)
    deg = 3 if len(x) >= 5 else 2
    coef = np.polyfit(x, np.log(m), deg, w=np.sqrt(m / m.max()))
    if deg == 2 and coef[0] >= 0:
        mean = np.sum(x * m) / np.sum(m)
        sd = np.sqrt(np.sum((x - mean) ** 2 * m) / np.sum(m))
        return stats.norm.logpdf(fine, loc=mean, scale=sd)
    return np.polyval(coef, fine)


def hyper_marginal(hp: HyperPosterior, j: int, variant: str = "corrected") -> PosteriorMarginal:
    """
    Posterior marginal of theta_j. One hyperparameter: cubic spline through
    the grid log densities; more: weights binned along theta_j and smoothed
    by a weighted log-polynomial. Evaluated on a fine grid spanning the
    explored range.
    """
    if not 0 <= j < hp.n_hyper:
        raise ModelSpecError(f"hyperparameter index {j} outside 0..{hp.n_hyper - 1}")
    name = hp.spec.hyper_names[j]
    n_fine = hp.exploration.fine_points
    if hp.n_hyper == 1:
        if len(hp.points) < 3:
            hp = _widened_points(hp)
            if len(hp.points) < 3:
                raise ExplorationError(f"marginal of {name} stays degenerate after widening")
        theta = hp.thetas[:, 0]
        lp = hp.log_posteriors(variant)
        order = np.argsort(theta)
        theta, lp = theta[order], lp[order]
        spline = interpolate.CubicSpline(theta, lp - lp.max(), bc_type="not-a-knot")
        fine = np.linspace(theta[0], theta[-1], n_fine)
        log_dens = spline(fine)
    else:
        theta = hp.thetas[:, j]
        w = hp.weights(variant)
        n_bins = max(5, int(round(np.sqrt(len(theta)))))
        mass, edges = np.histogram(theta, bins=n_bins, weights=w)
        centres = 0.5 * (edges[1:] + edges[:-1])
        fine = np.linspace(edges[0], edges[-1], n_fine)
        log_dens = _log_quadratic_marginal(centres, mass, fine)
    return PosteriorMarginal(x=fine, density=np.exp(log_dens - np.max(log_dens)), name=name)


def latent_marginal(spec: ModelSpec, hp: HyperPosterior, i: int,
                    variant: str = "corrected") -> PosteriorMarginal:
    """
    Mixture over the grid of per-theta marginals of x_i (skew-normal for the
    fixed effects, Gaussian otherwise) on a common mu +- 5 sigma envelope.
    """
    if not 0 <= i < spec.n_latent:
        raise ModelSpecError(f"latent index {i} outside 0..{spec.n_latent - 1}")
    w = hp.weights(variant)
    active = [(wk, pt) for wk, pt in zip(w, hp.points) if wk > 1e-12]
    centres, scales = [], []
    for _, pt in active:
        sn = pt.marginal_for(i)
        centres.append(sn.improved_mean if sn is not None else pt.mean[i])
        scales.append(pt.sd[i])
    centres, scales = np.array(centres), np.array(scales)
    lo = float(np.min(centres - LATENT_ENVELOPE * scales))
    hi = float(np.max(centres + LATENT_ENVELOPE * scales))
    x = np.linspace(lo, hi, LATENT_GRID_POINTS)
    dens = np.zeros_like(x)
    for wk, pt in active:
        sn = pt.marginal_for(i)
        dens += wk * (sn.pdf(x) if sn is not None
                      else stats.norm.pdf(x, loc=pt.mean[i], scale=pt.sd[i]))
    return PosteriorMarginal(x=x, density=dens, name=spec.latent_names[i])


@dataclass(frozen=True, eq=False)
class FitResult:
    """Hyperposterior plus the marginals reported for one correction setting"""
    posterior: HyperPosterior
    hyper: Dict[str, PosteriorMarginal]
    latent: Dict[str, PosteriorMarginal]
    seconds: float

    def summary_frame(self) -> pd.DataFrame:
        rows = [{"parameter": name, "kind": "hyper", **m.summary()} for name, m in self.hyper.items()]
        rows += [{"parameter": name, "kind": "latent", **m.summary()} for name, m in self.latent.items()]
        return pd.DataFrame(rows, columns=["parameter", "kind", "mean", "sd", "q025", "q50", "q975"])


def fit(spec: ModelSpec, cfg: CorrectionConfig, exploration: Optional[ExplorationConfig] = None,
        latent_indices: Optional[Sequence[int]] = None) -> FitResult:
    """
    Explore the hyperposterior and compute marginals for every hyperparameter
    and, by default, every fixed effect.
    """
    started = time.perf_counter()
    hp = explore(spec, cfg, exploration)
    hyper = {spec.hyper_names[j]: hyper_marginal(hp, j) for j in range(spec.n_hyper)}
    indices = spec.fixed_index_set if latent_indices is None else latent_indices
    names = spec.latent_names
    latent = {names[int(i)]: latent_marginal(spec, hp, int(i)) for i in indices}
    return FitResult(posterior=hp, hyper=hyper, latent=latent, seconds=time.perf_counter() - started)
