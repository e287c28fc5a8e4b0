"""
Registry of the model templates used by the simulation experiments. Each
template turns a parameter dictionary into the model that generates data,
the model that is fitted and the true values.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ModelSpecError
from .model_core import (HyperPrior, LatentBlock, LikelihoodFamily, ModelSpec, TrueValues,
                         internal_from_correlation)

logger = logging.getLogger(__name__)

TRANSFORMS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda t: np.asarray(t, dtype=float),
    "variance": lambda t: np.exp(-np.asarray(t, dtype=float)),
    "sd": lambda t: np.exp(-0.5 * np.asarray(t, dtype=float)),
}

FONG_TIMES = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
TOENAIL_MONTHS = (0.0, 1.0, 2.0, 3.0, 6.0, 9.0, 12.0)
TOENAIL_ALPHA = (-1.62, -0.16, -0.39, -0.14)
MODEL08_CONFIGURATIONS = {
    1: {"var_b0": 0.5, "var_b1": 0.25, "rho": 0.0},
    2: {"var_b0": 0.5, "var_b1": 0.25, "rho": 0.5},
    3: {"var_b0": 0.5, "var_b1": 0.25, "rho": 0.9},
    4: {"var_b0": 3.0, "var_b1": 0.5, "rho": 0.0},
    5: {"var_b0": 3.0, "var_b1": 0.5, "rho": 0.5},
    6: {"var_b0": 3.0, "var_b1": 0.5, "rho": 0.9},
}


@dataclass
class ReportedParameter:
    """A quantity compared between methods, read from a hyperparameter or latent marginal"""
    name: str
    source: str
    key: str
    transform: str = "identity"

    def apply(self, values):
        return TRANSFORMS[self.transform](values)


@dataclass
class TemplateInstance:
    simulate_spec: ModelSpec
    fit_spec: ModelSpec
    truth: TrueValues
    reported: List[ReportedParameter]
    params: Dict


@dataclass
class ModelTemplate:
    name: str
    description: str
    defaults: Dict
    builder: Callable[[Dict], TemplateInstance] = field(repr=False)
    fit_keys: Tuple[str, ...] = ()


class _Design:
    """Collects (observation, latent index, coefficient) triplets, dropping zeros"""

    def __init__(self):
        self.rows: List[int] = []
        self.cols: List[int] = []
        self.vals: List[float] = []

    def add(self, obs: int, col: int, value: float):
        if value != 0.0:
            self.rows.append(obs)
            self.cols.append(col)
            self.vals.append(float(value))


def _with_offsets(blocks: List[LatentBlock]) -> List[LatentBlock]:
    out, offset = [], 0
    for b in blocks:
        out.append(LatentBlock(b.kind, b.size, offset, b.hyper, b.name))
        offset += out[-1].length
    return out


def _fixed_design(design: _Design, obs: int, covariates: np.ndarray):
    for k, value in enumerate(covariates):
        design.add(obs, k, value)


def _check_length(params: Dict, key: str, expected: int):
    if len(np.atleast_1d(params[key])) != expected:
        raise ModelSpecError(f"parameter '{key}' needs {expected} values, got {params[key]}")


def _intercept_iid(params: Dict, family: LikelihoodFamily, name: str) -> TemplateInstance:
    """Intercept plus one iid effect per observation: the minimal, gaussian and poisson models"""
    n = int(params["n"])
    design = _Design()
    for j in range(n):
        design.add(j, 0, 1.0)
        design.add(j, 1 + j, 1.0)
    blocks = _with_offsets([LatentBlock("fixed", 1, name="beta"),
                            LatentBlock("iid", n, hyper=(0,), name="u")])
    spec = ModelSpec(
        blocks=blocks, design_rows=design.rows, design_cols=design.cols, design_vals=design.vals,
        n_obs=n, likelihood=family,
        hyper_priors=(HyperPrior("gamma", (0,), shape=params["prior_shape"], rate=params["prior_rate"]),),
        fixed_mean=[0.0], fixed_variance=[params["beta_prior_variance"]],
        hyper_names=("log_precision",), name=name,
    )
    truth = TrueValues(fixed=np.array([params["beta"]]), hyper=np.array([-np.log(params["sigma2"])]))
    reported = [
        ReportedParameter("beta", "latent", "beta"),
        ReportedParameter("log_precision", "hyper", "log_precision"),
        ReportedParameter("sigma2", "hyper", "log_precision", "variance"),
        ReportedParameter("sigma", "hyper", "log_precision", "sd"),
    ]
    return TemplateInstance(spec, spec, truth, reported, params)


def _build_minimal(params: Dict) -> TemplateInstance:
    return _intercept_iid(params, LikelihoodFamily("bernoulli"), "minimal")


def _build_gaussian(params: Dict) -> TemplateInstance:
    return _intercept_iid(params, LikelihoodFamily("gaussian", params["noise_precision"]), "gaussian")


def _build_poisson(params: Dict) -> TemplateInstance:
    return _intercept_iid(params, LikelihoodFamily("poisson"), "poisson")


def _fong_covariates(params: Dict) -> Tuple[int, np.ndarray, np.ndarray]:
    clusters = int(params["clusters"])
    times = np.asarray(params["times"], dtype=float)
    group = (np.arange(clusters) >= clusters // 2).astype(float)
    return clusters, times, group


def _family_for_trials(m: int) -> LikelihoodFamily:
    if m < 1:
        raise ModelSpecError(f"binomial trials must be positive, got {m}")
    return LikelihoodFamily("bernoulli" if m == 1 else "binomial")


def _model07_spec(params: Dict) -> ModelSpec:
    clusters, times, group = _fong_covariates(params)
    n_i = len(times)
    m = int(params["m"])
    family = _family_for_trials(m)
    design = _Design()
    for i in range(clusters):
        for j, t in enumerate(times):
            obs = i * n_i + j
            _fixed_design(design, obs, np.array([1.0, t, group[i], t * group[i]]))
            design.add(obs, 4 + i, 1.0)
    blocks = _with_offsets([LatentBlock("fixed", 4, name="beta"),
                            LatentBlock("iid", clusters, hyper=(0,), name="b0")])
    if params["informative"]:
        hyper_prior = HyperPrior("normal", (0,), mean=0.0, variance=1.0)
        fixed_var = 1.0
    else:
        hyper_prior = HyperPrior("gamma", (0,), shape=0.5, rate=0.0164)
        fixed_var = 1000.0
    n_obs = clusters * n_i
    return ModelSpec(
        blocks=blocks, design_rows=design.rows, design_cols=design.cols, design_vals=design.vals,
        n_obs=n_obs, likelihood=family, hyper_priors=(hyper_prior,),
        fixed_mean=np.zeros(4), fixed_variance=np.full(4, fixed_var),
        trials=None if m == 1 else np.full(n_obs, m), hyper_names=("log_precision_b0",),
        name="model07",
    )


_FONG_REPORTED = [ReportedParameter(f"beta{k}", "latent", f"beta{k}") for k in range(4)]


def _build_model07(params: Dict) -> TemplateInstance:
    _check_length(params, "beta", 4)
    if params.get("n_i") == 2:
        params = {**params, "times": (-3.0, 3.0), "informative": True}
    spec = _model07_spec(params)
    truth = TrueValues(fixed=np.asarray(params["beta"], dtype=float),
                       hyper=np.array([-np.log(params["sigma2_b0"])]))
    reported = _FONG_REPORTED + [
        ReportedParameter("sigma2_b0", "hyper", "log_precision_b0", "variance"),
        ReportedParameter("sigma_b0", "hyper", "log_precision_b0", "sd"),
        ReportedParameter("log_precision_b0", "hyper", "log_precision_b0"),
    ]
    return TemplateInstance(spec, spec, truth, reported, params)


def _model08_params(params: Dict) -> Dict:
    config = params.get("configuration")
    if config is not None:
        if int(config) not in MODEL08_CONFIGURATIONS:
            raise ModelSpecError(f"model08 configuration must be 1..6, got {config}")
        params = {**params, **MODEL08_CONFIGURATIONS[int(config)]}
    return params


def _model08_spec(params: Dict) -> ModelSpec:
    clusters, times, group = _fong_covariates(params)
    n_i = len(times)
    m = int(params["m"])
    family = _family_for_trials(m)
    design = _Design()
    for i in range(clusters):
        for j, t in enumerate(times):
            obs = i * n_i + j
            _fixed_design(design, obs, np.array([1.0, t, group[i], t * group[i]]))
            design.add(obs, 4 + 2 * i, 1.0)
            design.add(obs, 4 + 2 * i + 1, t)
    blocks = _with_offsets([LatentBlock("fixed", 4, name="beta"),
                            LatentBlock("bivariate", clusters, hyper=(0, 1, 2), name="b")])
    df, scale = 3.0, (0.17, 0.025)
    n_obs = clusters * n_i
    return ModelSpec(
        blocks=blocks, design_rows=design.rows, design_cols=design.cols, design_vals=design.vals,
        n_obs=n_obs, likelihood=family,
        hyper_priors=(HyperPrior("wishart", (0, 1, 2), df=df, scale=scale),),
        fixed_mean=np.zeros(4), fixed_variance=np.full(4, 1000.0),
        trials=None if m == 1 else np.full(n_obs, m),
        hyper_names=("theta1", "theta2", "theta3"),
        initial_hyper=np.array([np.log(df * scale[0]), np.log(df * scale[1]), 0.0]),
        name="model08",
    )


def _model08_truth(params: Dict) -> TrueValues:
    return TrueValues(
        fixed=np.asarray(params["beta"], dtype=float),
        hyper=np.array([-np.log(params["var_b0"]), -np.log(params["var_b1"]),
                        internal_from_correlation(params["rho"])]),
    )


def _build_model08(params: Dict) -> TemplateInstance:
    _check_length(params, "beta", 4)
    params = _model08_params(params)
    if int(params["m"]) == 1:
        logger.warning("model08 with binary data is close to unidentifiable; "
                       "results are diagnostics only")
    spec = _model08_spec(params)
    reported = _FONG_REPORTED + [
        ReportedParameter("theta1", "hyper", "theta1"),
        ReportedParameter("theta2", "hyper", "theta2"),
        ReportedParameter("theta3", "hyper", "theta3"),
        ReportedParameter("var_b0", "hyper", "theta1", "variance"),
        ReportedParameter("var_b1", "hyper", "theta2", "variance"),
    ]
    return TemplateInstance(spec, spec, _model08_truth(params), reported, params)


_MODEL07_FIT_KEYS = ("clusters", "times", "m", "informative", "n_i")


def _build_misspecified(params: Dict) -> TemplateInstance:
    """Simulate from model08, fit model07 with its own priors"""
    _check_length(params, "beta", 4)
    params = _model08_params(params)
    simulate_spec = _model08_spec(params)
    fit_params = {k: params[k] for k in _MODEL07_FIT_KEYS if k in params}
    fit_params.setdefault("informative", False)
    fit_spec = _model07_spec(fit_params)
    reported = _FONG_REPORTED + [
        ReportedParameter("sigma2_b0", "hyper", "log_precision_b0", "variance"),
        ReportedParameter("log_precision_b0", "hyper", "log_precision_b0"),
    ]
    return TemplateInstance(simulate_spec, fit_spec, _model08_truth(params), reported, params)


def toenail_covariates(subjects: int, design_seed: int, jitter: float = 0.5):
    """
    Randomized treatment and jittered visit months for a toenail-like trial.
    Returns (treatment per subject, months array subjects x 7).
    """
    rng = np.random.default_rng(design_seed)
    treatment = (rng.random(subjects) < 0.5).astype(float)
    months = np.asarray(TOENAIL_MONTHS)[None, :] + rng.uniform(-jitter, jitter, (subjects, len(TOENAIL_MONTHS)))
    months[:, 0] = 0.0
    return treatment, np.clip(months, 0.0, None)


def toenail_spec(subject_index: np.ndarray, treatment: np.ndarray, months: np.ndarray,
                 y: Optional[np.ndarray] = None, prior_rate: float = 5e-5) -> ModelSpec:
    """
    Toenail model from observation-level arrays: subject index, treatment and
    time of each observation.
    """
    subject_index = np.asarray(subject_index, dtype=int)
    subjects = int(subject_index.max()) + 1
    design = _Design()
    for obs, (s, trt, t) in enumerate(zip(subject_index, treatment, months)):
        _fixed_design(design, obs, np.array([1.0, trt, t, trt * t]))
        design.add(obs, 4 + s, 1.0)
    blocks = _with_offsets([LatentBlock("fixed", 4, name="alpha"),
                            LatentBlock("iid", subjects, hyper=(0,), name="b")])
    return ModelSpec(
        blocks=blocks, design_rows=design.rows, design_cols=design.cols, design_vals=design.vals,
        n_obs=len(subject_index), likelihood=LikelihoodFamily("bernoulli"),
        hyper_priors=(HyperPrior("gamma", (0,), shape=1.0, rate=prior_rate),),
        fixed_mean=np.zeros(4), fixed_variance=np.full(4, 1e4), y=y,
        hyper_names=("log_precision",), initial_hyper=np.array([-2.0]), name="toenail",
    )


def _build_toenail(params: Dict) -> TemplateInstance:
    _check_length(params, "alpha", 4)
    subjects = int(params["subjects"])
    treatment, months = toenail_covariates(subjects, int(params["design_seed"]), float(params["jitter"]))
    visits = months.shape[1]
    subject_index = np.repeat(np.arange(subjects), visits)
    spec = toenail_spec(subject_index, np.repeat(treatment, visits), months.ravel())
    truth = TrueValues(fixed=np.asarray(params["alpha"], dtype=float),
                       hyper=np.array([-2.0 * np.log(params["sigma"])]))
    reported = [ReportedParameter(f"alpha{k}", "latent", f"alpha{k}") for k in range(4)] + [
        ReportedParameter("log_precision", "hyper", "log_precision"),
        ReportedParameter("sigma2", "hyper", "log_precision", "variance"),
        ReportedParameter("sigma", "hyper", "log_precision", "sd"),
    ]
    return TemplateInstance(spec, spec, truth, reported, params)


def _build_ar1(params: Dict) -> TemplateInstance:
    n = int(params["n"])
    rho, tau = float(params["rho"]), float(params["tau"])
    kappa = tau * (1.0 - rho * rho)
    design = _Design()
    for j in range(n):
        design.add(j, 0, 1.0)
        design.add(j, 1 + j, 1.0)
    blocks = _with_offsets([LatentBlock("fixed", 1, name="beta"),
                            LatentBlock("ar1", n, hyper=(0, 1), name="u")])
    spec = ModelSpec(
        blocks=blocks, design_rows=design.rows, design_cols=design.cols, design_vals=design.vals,
        n_obs=n, likelihood=LikelihoodFamily("bernoulli"),
        hyper_priors=(HyperPrior("gamma", (0,), shape=1.0, rate=1.0),
                      HyperPrior("normal", (1,), mean=0.0, variance=1.0)),
        fixed_mean=[0.0], fixed_variance=[1.0], hyper_names=("theta1", "theta2"), name="ar1",
    )
    truth = TrueValues(fixed=np.array([params["beta"]]),
                       hyper=np.array([np.log(kappa), internal_from_correlation(rho)]))
    reported = [
        ReportedParameter("beta", "latent", "beta"),
        ReportedParameter("theta1", "hyper", "theta1"),
        ReportedParameter("theta2", "hyper", "theta2"),
    ]
    return TemplateInstance(spec, spec, truth, reported, params)


class ModelTemplates:
    def __init__(self):
        fong = {"clusters": 100, "times": FONG_TIMES, "beta": [-2.5, 1.0, -1.0, -0.5]}
        self.templates = {
            "minimal": ModelTemplate(
                name="minimal",
                description="Bernoulli logit, intercept plus one iid effect per observation",
                defaults={"n": 100, "beta": 2.0, "sigma2": 1.0, "prior_shape": 1.0,
                          "prior_rate": 1.0, "beta_prior_variance": 1.0},
                builder=_build_minimal,
            ),
            "gaussian": ModelTemplate(
                name="gaussian",
                description="Gaussian observations with known precision; Laplace is exact",
                defaults={"n": 20, "beta": 1.0, "sigma2": 1.0, "noise_precision": 4.0,
                          "prior_shape": 1.0, "prior_rate": 1.0, "beta_prior_variance": 1.0},
                builder=_build_gaussian,
            ),
            "model07": ModelTemplate(
                name="model07",
                description="Binomial GLMM with random intercepts, 100 clusters x 7 times",
                defaults={**fong, "sigma2_b0": 1.0, "m": 1, "informative": False, "n_i": 7},
                builder=_build_model07,
            ),
            "model08": ModelTemplate(
                name="model08",
                description="Binomial GLMM with correlated random intercepts and slopes",
                defaults={**fong, "m": 2, "configuration": 1},
                builder=_build_model08,
            ),
            "toenail": ModelTemplate(
                name="toenail",
                description="Toenail-like trial: 294 subjects x 7 jittered visits",
                defaults={"subjects": 294, "alpha": list(TOENAIL_ALPHA), "sigma": 4.0,
                          "design_seed": 20, "jitter": 0.5},
                builder=_build_toenail,
            ),
            "poisson": ModelTemplate(
                name="poisson",
                description="Poisson log link, intercept plus one iid effect per count",
                defaults={"n": 300, "beta": 0.0, "sigma2": 1.0, "prior_shape": 1.0,
                          "prior_rate": 1.0, "beta_prior_variance": 1.0},
                builder=_build_poisson,
            ),
            "ar1": ModelTemplate(
                name="ar1",
                description="Bernoulli logit with an AR1 latent series",
                defaults={"n": 100, "rho": 0.5, "tau": 1.0, "beta": 2.0},
                builder=_build_ar1,
            ),
            "misspecified": ModelTemplate(
                name="misspecified",
                description="Simulate from model08, fit model07",
                defaults={**fong, "m": 2, "configuration": 1},
                builder=_build_misspecified,
                fit_keys=_MODEL07_FIT_KEYS,
            ),
        }

    def get_template(self, name: str) -> ModelTemplate:
        key = name.lower().replace("-", "_")
        if key in ("toenail_like",):
            key = "toenail"
        if key not in self.templates:
            raise ModelSpecError(f"unknown model template '{name}'; "
                                 f"choose from {', '.join(self.list_templates())}")
        return self.templates[key]

    def list_templates(self) -> List[str]:
        return list(self.templates.keys())

    def build(self, name: str, overrides: Optional[Dict] = None) -> TemplateInstance:
        """Instantiate a template with defaults updated by overrides"""
        template = self.get_template(name)
        unknown = set(overrides or {}) - set(template.defaults) - {"configuration", "n_i"}
        if unknown:
            raise ModelSpecError(f"template '{template.name}' has no parameters {sorted(unknown)}")
        params = {**template.defaults, **(overrides or {})}
        return template.builder(params)
