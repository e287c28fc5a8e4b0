"""
Simulation harness: replicate datasets from a model template, fit every
correction variant, run the reference sampler and summarize the comparison.
"""

import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from glob import glob
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy

from .copula_correction import CorrectionConfig
from .exceptions import CopulaInlaError, ExperimentError, ModelSpecError
from .hyperposterior import ExplorationConfig, FitResult, PosteriorMarginal, fit
from .mcmc import ChainConfig, PosteriorSamples, run_mcmc
from .model_core import ModelSpec, simulate_dataset
from .templates import ModelTemplates, ReportedParameter, TemplateInstance

logger = logging.getLogger(__name__)

VARIANT_LABELS = {None: "uncorrected", "mean": "mean", "skew": "skew"}
DEFAULT_VARIANTS: Tuple[Optional[str], ...] = (None, "mean", "skew")
REPLICATE_PATTERN = "replicate_{:04d}.csv"
CSV_FLOAT = "%.17g"
REPORT_COLUMNS = ["parameter", "method", "replicates", "avg_mean", "avg_mcmc_mean",
                  "scaled_gap", "variance_ratio", "coverage"]


def config_hash(config: Dict) -> str:
    """sha256 of the canonical JSON form of a configuration"""
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class ExperimentPlan:
    """One simulation study; m and n_i fold into the template parameters"""
    template: str
    params: Dict = field(default_factory=dict)
    replicates: int = 100
    seed: int = 1
    variants: Tuple[Optional[str], ...] = DEFAULT_VARIANTS
    xi: float = 10.0
    mcmc: Dict = field(default_factory=dict)
    exclusion_limit: float = 0.05
    name: str = ""
    m: Optional[int] = None
    n_i: Optional[int] = None

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise ModelSpecError(f"replicate count must be at least 1, got {self.replicates}")
        self.variants = tuple(CorrectionConfig(mode=v, xi=self.xi).mode for v in self.variants)
        if not self.variants:
            raise ModelSpecError("plan needs at least one fit variant")
        for key in ("m", "n_i"):
            if getattr(self, key) is not None:
                self.params = {**self.params, key: int(getattr(self, key))}
        self.name = self.name or self.template
        # validates the template name and parameter dimensions
        self.instance()

    def instance(self) -> TemplateInstance:
        return ModelTemplates().build(self.template, self.params)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["variants"] = [v or "none" for v in self.variants]
        return data

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict, settings: Optional[Dict] = None) -> "ExperimentPlan":
        """Plan from its JSON form; replicates, exclusion_limit and xi fall back to settings"""
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelSpecError(f"unknown plan fields {sorted(unknown)}")
        if "template" not in data:
            raise ModelSpecError("plan needs a 'template'")
        data = dict(data)
        if settings:
            experiments = settings.get("experiments", {})
            for key in ("replicates", "exclusion_limit"):
                if key not in data and key in experiments:
                    data[key] = experiments[key]
            if "xi" not in data and "xi" in settings.get("correction", {}):
                data["xi"] = settings["correction"]["xi"]
        if "variants" in data:
            data["variants"] = tuple(None if v in (None, "none") else v for v in data["variants"])
        return cls(**data)


def load_plan(path: str, settings: Optional[Dict] = None) -> ExperimentPlan:
    try:
        with open(path, "r") as f:
            return ExperimentPlan.from_dict(json.load(f), settings)
    except json.JSONDecodeError as e:
        raise ModelSpecError(f"{path} is not valid JSON: {e}") from e


@dataclass
class ComparisonReport:
    """Per parameter and method averages over replicates, with the bookkeeping to reproduce them"""
    table: pd.DataFrame
    replicates: int
    excluded: int = 0
    seed: Optional[int] = None
    timings: Optional[pd.DataFrame] = None

    def row(self, parameter: str, method: str) -> pd.Series:
        hit = self.table[(self.table["parameter"] == parameter) & (self.table["method"] == method)]
        if hit.empty:
            raise KeyError(f"no report row for {parameter}/{method}")
        return hit.iloc[0]

    def to_csv(self, path: str):
        self.table.to_csv(path, index=False, float_format=CSV_FLOAT)


def replicate_seeds(seed: int, replicates: int) -> List[Tuple[int, int]]:
    """(data seed, sampler seed) per replicate, spawned from the plan seed"""
    return [tuple(int(s) for s in child.generate_state(2))
            for child in np.random.SeedSequence(seed).spawn(replicates)]


def _resolve_marginal(result: FitResult, rp: ReportedParameter) -> PosteriorMarginal:
    pool = result.hyper if rp.source == "hyper" else result.latent
    if rp.key not in pool:
        raise ExperimentError(f"fitted model has no {rp.source} parameter '{rp.key}'")
    return pool[rp.key]


def check_reported(spec: ModelSpec, reported: Sequence[ReportedParameter]):
    """Every reported parameter must exist in the fitted model"""
    for rp in reported:
        names = spec.hyper_names if rp.source == "hyper" else spec.latent_names
        if rp.key not in names:
            raise ExperimentError(
                f"reported parameter '{rp.name}' reads '{rp.key}', which model "
                f"'{spec.name}' does not have"
            )


def comparison_rows(result: FitResult, samples: PosteriorSamples,
                    reported: Sequence[ReportedParameter], method: str) -> List[Dict]:
    """One row per reported parameter: INLA summary, sampler summary and coverage"""
    rows = []
    for rp in reported:
        marginal = _resolve_marginal(result, rp)
        s = marginal.summary() if rp.transform == "identity" else marginal.transformed(rp.apply)
        draws = rp.apply(samples.values(rp.key))
        rows.append({
            "parameter": rp.name, "method": method,
            "inla_mean": s["mean"], "inla_sd": s["sd"], "inla_q025": s["q025"],
            "inla_q975": s["q975"], "mcmc_mean": float(draws.mean()),
            "mcmc_sd": float(draws.std()),
            "coverage": float(np.mean((draws >= s["q025"]) & (draws <= s["q975"]))),
        })
    return rows


def run_replicate(plan: ExperimentPlan, index: int, seeds: Tuple[int, int],
                  exploration: ExplorationConfig, chain: ChainConfig,
                  out_dir: Optional[str] = None) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """
    Simulate, sample and fit each variant for one replicate.

    Returns:
        (comparison rows, seconds per method plus 'mcmc')
    """
    instance = plan.instance()
    check_reported(instance.fit_spec, instance.reported)
    data_seed, chain_seed = seeds
    y = simulate_dataset(instance.simulate_spec, instance.truth, data_seed)
    spec = instance.fit_spec.with_data(y)

    started = time.perf_counter()
    samples = run_mcmc(spec, None, replace(chain, seed=chain_seed))
    seconds = {"mcmc": time.perf_counter() - started}

    rows = []
    for mode in plan.variants:
        result = fit(spec, CorrectionConfig(mode=mode, xi=plan.xi), exploration)
        seconds[VARIANT_LABELS[mode]] = result.seconds
        rows.extend(comparison_rows(result, samples, instance.reported, VARIANT_LABELS[mode]))
    frame = pd.DataFrame(rows)
    frame.insert(0, "replicate", index)
    if out_dir:
        frame.to_csv(os.path.join(out_dir, REPLICATE_PATTERN.format(index)), index=False,
                     float_format=CSV_FLOAT)
    return frame, seconds


def _replicate_job(args) -> Tuple[int, Optional[str], Dict[str, float]]:
    plan, index, seeds, exploration, chain, out_dir = args
    try:
        _, seconds = run_replicate(plan, index, seeds, exploration, chain, out_dir)
        return index, None, seconds
    except (CopulaInlaError, np.linalg.LinAlgError, AssertionError) as e:
        logger.warning(f"replicate {index} failed: {type(e).__name__}: {e}")
        return index, f"{type(e).__name__}: {e}", {}


def summarize_replicates(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Averages over replicates per (parameter, method): posterior means, the
    scaled gap (E(INLA) - E(MCMC)) / sd(MCMC), the variance ratio
    Var(INLA) / Var(MCMC) and coverage of the 95% interval.
    """
    if frame.empty:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    work = frame.assign(
        scaled_gap=(frame["inla_mean"] - frame["mcmc_mean"]) / frame["mcmc_sd"],
        variance_ratio=frame["inla_sd"] ** 2 / frame["mcmc_sd"] ** 2,
    )
    grouped = work.groupby(["parameter", "method"], sort=True)
    table = pd.DataFrame({
        "replicates": grouped["replicate"].nunique(),
        "avg_mean": grouped["inla_mean"].mean(),
        "avg_mcmc_mean": grouped["mcmc_mean"].mean(),
        "scaled_gap": grouped["scaled_gap"].mean(),
        "variance_ratio": grouped["variance_ratio"].mean(),
        "coverage": grouped["coverage"].mean(),
    }).reset_index()
    return table[REPORT_COLUMNS]


def timing_summary(seconds: Sequence[Dict[str, float]]) -> pd.DataFrame:
    """min / quartiles / max of wall-clock seconds, one row per method"""
    frame = pd.DataFrame([s for s in seconds if s])
    rows = []
    for method in frame.columns:
        s = frame[method].dropna()
        rows.append({"method": method, "min": s.min(), "q25": s.quantile(0.25),
                     "median": s.median(), "q75": s.quantile(0.75), "max": s.max()})
    return pd.DataFrame(rows, columns=["method", "min", "q25", "median", "q75", "max"])


def merge_replicates(out_dir: str) -> pd.DataFrame:
    """Concatenate replicate_XXXX.csv files in replicate order"""
    paths = sorted(glob(os.path.join(out_dir, "replicate_*.csv")))
    if not paths:
        raise ExperimentError(f"no replicate outputs found in {out_dir}")
    frame = pd.concat([pd.read_csv(p) for p in paths], ignore_index=True)
    return frame.sort_values(["replicate", "method", "parameter"], kind="stable").reset_index(drop=True)


def build_report(out_dir: str, excluded: int = 0, seed: Optional[int] = None) -> ComparisonReport:
    """ComparisonReport from stored replicate outputs, written to report.csv"""
    frame = merge_replicates(out_dir)
    report = ComparisonReport(table=summarize_replicates(frame),
                              replicates=int(frame["replicate"].nunique()),
                              excluded=excluded, seed=seed)
    report.to_csv(os.path.join(out_dir, "report.csv"))
    return report


def library_versions() -> Dict[str, str]:
    from . import __version__
    return {"copula_inla": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}


def write_manifest(out_dir: str, config: Dict, config_hash: str, seeds: Sequence,
                   extra: Optional[Dict] = None) -> str:
    """JSON run manifest: versions, seeds and the config hash"""
    manifest = {
        "created": datetime.now().isoformat(timespec="seconds"),
        "versions": library_versions(),
        "config": config,
        "config_hash": config_hash,
        "seeds": [list(s) if isinstance(s, (tuple, list)) else s for s in seeds],
        **(extra or {}),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, default=str)
    return path


def run_experiment(plan: ExperimentPlan, out_dir: str, settings: Optional[Dict] = None,
                   threads: int = 1) -> ComparisonReport:
    """
    Run every replicate of the plan, writing replicate_XXXX.csv files, then
    merge them into report.csv. Wall-clock timings go to timings.csv.

    Raises:
        ExperimentError: more than the plan's exclusion limit of replicates failed
    """
    settings = settings or {}
    os.makedirs(out_dir, exist_ok=True)
    stale = glob(os.path.join(out_dir, "replicate_*.csv"))
    if stale:
        logger.info(f"Removing {len(stale)} replicate file(s) left in {out_dir}")
        for path in stale:
            os.remove(path)
    exploration = ExplorationConfig.from_settings(settings, threads=1)
    chain = ChainConfig.from_settings(settings, **plan.mcmc)
    seeds = replicate_seeds(plan.seed, plan.replicates)
    jobs = [(plan, r, seeds[r], exploration, chain, out_dir) for r in range(plan.replicates)]

    started = time.perf_counter()
    logger.info(f"Running {plan.replicates} replicates of '{plan.name}' on {threads} worker(s)")
    if threads > 1 and plan.replicates > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_replicate_job, jobs))
    else:
        outcomes = [_replicate_job(job) for job in jobs]

    failures = {index: reason for index, reason, _ in outcomes if reason}
    timings = timing_summary([seconds for _, _, seconds in outcomes])
    timings.to_csv(os.path.join(out_dir, "timings.csv"), index=False, float_format="%.6g")
    write_manifest(out_dir, plan.to_dict(), plan.config_hash(), seeds, extra={
        "excluded": sorted(failures), "failures": failures,
        "seconds": time.perf_counter() - started,
    })
    limit = plan.exclusion_limit * plan.replicates
    if len(failures) > limit:
        raise ExperimentError(
            f"{len(failures)} of {plan.replicates} replicates failed "
            f"(limit {plan.exclusion_limit:.0%}); see manifest.json"
        )
    if failures:
        logger.warning(f"Excluded {len(failures)} failed replicate(s): {sorted(failures)}")
    report = build_report(out_dir, excluded=len(failures), seed=plan.seed)
    report.timings = timings
    return report


def compare_summaries(inla: pd.DataFrame, reference: pd.DataFrame,
                      samples: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """
    Scaled mean gap and variance ratio of one INLA summary against a reference
    summary (both with parameter, mean, sd columns). Coverage needs the
    reference draws and the INLA q025/q975 columns.
    """
    for frame, label in ((inla, "INLA"), (reference, "reference")):
        missing = {"parameter", "mean", "sd"} - set(frame.columns)
        if missing:
            raise ModelSpecError(f"{label} summary lacks columns {sorted(missing)}")
    merged = inla.add_suffix("_inla").rename(columns={"parameter_inla": "parameter"}).merge(
        reference.add_suffix("_ref").rename(columns={"parameter_ref": "parameter"}),
        on="parameter", sort=False)
    if merged.empty:
        raise ExperimentError("summaries share no parameters")
    out = pd.DataFrame({
        "parameter": merged["parameter"],
        "mean_inla": merged["mean_inla"],
        "mean_ref": merged["mean_ref"],
        "scaled_gap": (merged["mean_inla"] - merged["mean_ref"]) / merged["sd_ref"],
        "variance_ratio": merged["sd_inla"] ** 2 / merged["sd_ref"] ** 2,
    })
    if samples is not None and {"q025_inla", "q975_inla"} <= set(merged.columns):
        out["coverage"] = [
            float(np.mean((samples[p] >= lo) & (samples[p] <= hi))) if p in samples.columns else np.nan
            for p, lo, hi in zip(merged["parameter"], merged["q025_inla"], merged["q975_inla"])
        ]
    return out


def _sweep(template: str, key: str, values: Sequence[float], base: Dict, reported_name: str,
           seed: int, variants: Sequence[Optional[str]], xi: float, chain: ChainConfig,
           exploration: ExplorationConfig, out_dir: Optional[str]) -> pd.DataFrame:
    registry = ModelTemplates()
    rows = []
    for value in values:
        instance = registry.build(template, {**base, key: value})
        rp = next(r for r in instance.reported if r.name == reported_name)
        y = simulate_dataset(instance.simulate_spec, instance.truth, seed)
        spec = instance.fit_spec.with_data(y)
        samples = run_mcmc(spec, None, chain)
        draws = rp.apply(samples.values(rp.key))
        mc_mean, mc_sd = float(draws.mean()), float(draws.std())
        for mode in variants:
            label = VARIANT_LABELS[mode]
            result = fit(spec, CorrectionConfig(mode=mode, xi=xi), exploration)
            marginal = _resolve_marginal(result, rp)
            if out_dir:
                marginal.to_csv(os.path.join(out_dir, f"{template}_{key}_{value:g}_{label}.csv"))
            rows.append({key: value, "method": label, "mean": marginal.mean, "sd": marginal.sd,
                         "mcmc_mean": mc_mean, "mcmc_sd": mc_sd,
                         "scaled_gap": (marginal.mean - mc_mean) / mc_sd})
        if out_dir:
            counts, edges = np.histogram(draws, bins=50, density=True)
            pd.DataFrame({"abscissa": 0.5 * (edges[:-1] + edges[1:]), "density": counts}).to_csv(
                os.path.join(out_dir, f"{template}_{key}_{value:g}_mcmc.csv"), index=False,
                float_format=CSV_FLOAT)
    return pd.DataFrame(rows)


def flag_under_correction(frame: pd.DataFrame, key: str) -> pd.DataFrame:
    """
    Mark corrected rows whose |scaled gap| exceeds the same method's gap at
    the smallest swept value.
    """
    frame = frame.copy()
    frame["under_correction"] = False
    corrected = frame["method"] != VARIANT_LABELS[None]
    for method, group in frame[corrected].groupby("method"):
        baseline = abs(group.loc[group[key].idxmin(), "scaled_gap"])
        worse = (group[key] > group[key].min()) & (group["scaled_gap"].abs() > baseline)
        frame.loc[worse[worse].index, "under_correction"] = True
    return frame


def toenail_sweep(sigmas: Sequence[float], base: Optional[Dict] = None, seed: int = 1,
                  variants: Sequence[Optional[str]] = DEFAULT_VARIANTS, xi: float = 10.0,
                  chain: Optional[ChainConfig] = None, exploration: Optional[ExplorationConfig] = None,
                  out_dir: Optional[str] = None) -> pd.DataFrame:
    """Toenail-structured data at each random-effect sd; log-precision marginals per variant"""
    if any(not s > 0 for s in sigmas):
        raise ModelSpecError(f"sweep sigmas must be positive, got {list(sigmas)}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    frame = _sweep("toenail", "sigma", sigmas, base or {}, "log_precision", seed, variants, xi,
                   chain or ChainConfig(), exploration or ExplorationConfig(), out_dir)
    frame = flag_under_correction(frame, "sigma")
    if frame["under_correction"].any():
        flagged = sorted(frame.loc[frame["under_correction"], "sigma"].unique().tolist())
        logger.info(f"under-correction flagged at sigma {flagged}")
    return frame


def poisson_sweep(betas: Sequence[float], base: Optional[Dict] = None, seed: int = 1,
                  variants: Sequence[Optional[str]] = DEFAULT_VARIANTS, xi: float = 10.0,
                  chain: Optional[ChainConfig] = None, exploration: Optional[ExplorationConfig] = None,
                  out_dir: Optional[str] = None) -> pd.DataFrame:
    """Poisson counts at each intercept; log-precision marginals per variant"""
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    return _sweep("poisson", "beta", betas, base or {}, "log_precision", seed, variants, xi,
                  chain or ChainConfig(), exploration or ExplorationConfig(), out_dir)
