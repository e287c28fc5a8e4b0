"""
Reading and writing model descriptions (JSON) and observations (CSV).

Model JSON schema:

    {
      "name": "model07",
      "blocks": [{"kind": "fixed", "size": 4, "name": "beta"},
                 {"kind": "iid", "size": 100, "hyper": [0], "name": "b0"}],
      "design": [[obs, latent_index, coefficient], ...],
      "n_obs": 700,
      "likelihood": {"kind": "binomial", "precision": 1.0},
      "trials": [2, 2, ...],
      "hyper_priors": [{"kind": "gamma", "indices": [0], "shape": 0.5, "rate": 0.0164}],
      "fixed_prior": {"mean": [0, 0, 0, 0], "variance": [1000, 1000, 1000, 1000]},
      "fixed_index_set": [0, 1, 2, 3],
      "hyper_names": ["log_precision_b0"],
      "initial_hyper": [0.0]
    }

Block offsets follow the listed order. "trials", "fixed_index_set",
"hyper_names" and "initial_hyper" are optional; a given fixed_index_set must
match the one implied by the blocks.
"""

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .exceptions import ModelSpecError
from .model_core import HyperPrior, LatentBlock, LikelihoodFamily, ModelSpec
from .templates import toenail_spec

logger = logging.getLogger(__name__)

TOENAIL_COLUMNS = ("id", "visit", "time", "treatment", "outcome")


def _require(data: Dict, key: str):
    if key not in data:
        raise ModelSpecError(f"model description is missing '{key}'")
    return data[key]


def spec_from_dict(data: Dict) -> ModelSpec:
    """Build a ModelSpec from the JSON schema above"""
    if not isinstance(data, dict):
        raise ModelSpecError("model description must be a JSON object")
    blocks, offset = [], 0
    for raw in _require(data, "blocks"):
        try:
            block = LatentBlock(kind=raw["kind"], size=int(raw["size"]), offset=offset,
                                hyper=tuple(raw.get("hyper", ())), name=raw.get("name", ""))
        except (KeyError, TypeError) as e:
            raise ModelSpecError(f"malformed block entry {raw}: {e}") from e
        blocks.append(block)
        offset += block.length

    design = np.asarray(_require(data, "design"), dtype=float)
    if design.size and (design.ndim != 2 or design.shape[1] != 3):
        raise ModelSpecError("design must be a list of [observation, latent index, coefficient]")
    design = design.reshape(-1, 3)
    if np.any(design[:, :2] != np.round(design[:, :2])):
        raise ModelSpecError("design observation and latent indices must be integers")

    lik = _require(data, "likelihood")
    lik = {"kind": lik} if isinstance(lik, str) else lik
    try:
        likelihood = LikelihoodFamily(kind=lik["kind"], precision=float(lik.get("precision", 1.0)))
        priors = [
            HyperPrior(kind=p["kind"], indices=tuple(p["indices"]),
                       **{k: (tuple(v) if k == "scale" else float(v))
                          for k, v in p.items() if k not in ("kind", "indices")})
            for p in data.get("hyper_priors", [])
        ]
    except (KeyError, TypeError) as e:
        raise ModelSpecError(f"malformed likelihood or prior entry: {e}") from e

    fixed_prior = data.get("fixed_prior", {"mean": [], "variance": []})
    spec = ModelSpec(
        blocks=blocks,
        design_rows=design[:, 0].astype(int), design_cols=design[:, 1].astype(int),
        design_vals=design[:, 2], n_obs=int(_require(data, "n_obs")),
        likelihood=likelihood, hyper_priors=priors,
        fixed_mean=fixed_prior.get("mean", []), fixed_variance=fixed_prior.get("variance", []),
        trials=data.get("trials"), y=data.get("y"),
        hyper_names=tuple(data.get("hyper_names", ())), initial_hyper=data.get("initial_hyper"),
        name=data.get("name", "model"),
    )
    declared = data.get("fixed_index_set")
    if declared is not None and sorted(int(i) for i in declared) != spec.fixed_index_set.tolist():
        raise ModelSpecError(
            f"fixed_index_set {sorted(declared)} differs from the blocks' fixed effects "
            f"and length-one random effects {spec.fixed_index_set.tolist()}"
        )
    return spec


def spec_to_dict(spec: ModelSpec, include_data: bool = False) -> Dict:
    data = {
        "name": spec.name,
        "blocks": [{"kind": b.kind, "size": b.size, "hyper": list(b.hyper), "name": b.name}
                   for b in spec.blocks],
        "design": [[int(r), int(c), float(v)] for r, c, v in
                   zip(spec.design_rows, spec.design_cols, spec.design_vals)],
        "n_obs": spec.n_obs,
        "likelihood": {"kind": spec.likelihood.kind, "precision": spec.likelihood.precision},
        "hyper_priors": [_prior_to_dict(p) for p in spec.hyper_priors],
        "fixed_prior": {"mean": spec.fixed_mean.tolist(), "variance": spec.fixed_variance.tolist()},
        "fixed_index_set": spec.fixed_index_set.tolist(),
        "hyper_names": list(spec.hyper_names),
        "initial_hyper": spec.initial_hyper.tolist(),
    }
    if spec.trials is not None:
        data["trials"] = spec.trials.tolist()
    if include_data and spec.y is not None:
        data["y"] = spec.y.tolist()
    return data


def _prior_to_dict(prior: HyperPrior) -> Dict:
    out = {"kind": prior.kind, "indices": list(prior.indices)}
    if prior.kind == "gamma":
        out.update(shape=prior.shape, rate=prior.rate)
    elif prior.kind == "normal":
        out.update(mean=prior.mean, variance=prior.variance)
    else:
        out.update(df=prior.df, scale=list(prior.scale))
    return out


def load_model(path: str) -> ModelSpec:
    """Load a model description JSON file"""
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelSpecError(f"{path} is not valid JSON: {e}") from e
    return spec_from_dict(data)


def save_model(spec: ModelSpec, path: str, include_data: bool = False):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec, include_data), f, indent=2)


def load_observations(path: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Read an observation CSV with columns obs, y and optionally trials.
    Rows are sorted by obs; returns (y, trials or None).
    """
    frame = pd.read_csv(path)
    missing = {"obs", "y"} - set(frame.columns)
    if missing:
        raise ModelSpecError(f"{path} lacks columns {sorted(missing)}")
    frame = frame.sort_values("obs")
    if not np.array_equal(frame["obs"].to_numpy(), np.arange(len(frame))):
        raise ModelSpecError(f"{path}: obs must number the rows 0..{len(frame) - 1}")
    trials = frame["trials"].to_numpy(dtype=int) if "trials" in frame.columns else None
    return frame["y"].to_numpy(dtype=float), trials


def save_observations(path: str, y: np.ndarray, trials: Optional[np.ndarray] = None):
    frame = pd.DataFrame({"obs": np.arange(len(y)), "y": np.asarray(y)})
    if trials is not None:
        frame["trials"] = np.asarray(trials, dtype=int)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


def attach_observations(spec: ModelSpec, path: str) -> ModelSpec:
    """spec with y (and trials, when the CSV has them) from an observation CSV"""
    y, trials = load_observations(path)
    if trials is not None:
        spec = replace(spec, trials=trials)
    return spec.with_data(y)


def load_toenail(path: str, prior_rate: float = 5e-5) -> ModelSpec:
    """
    Toenail model with outcomes attached, from a CSV laid out as
    id, visit, time, treatment, outcome (one row per visit).
    """
    frame = pd.read_csv(path)
    missing = set(TOENAIL_COLUMNS) - set(frame.columns)
    if missing:
        raise ModelSpecError(f"{path} lacks toenail columns {sorted(missing)}")
    frame = frame.sort_values(["id", "visit"]).reset_index(drop=True)
    subject_index = pd.factorize(frame["id"], sort=True)[0]
    logger.info(f"Loaded {len(frame)} toenail visits from {subject_index.max() + 1} subjects")
    return toenail_spec(subject_index, frame["treatment"].to_numpy(dtype=float),
                        frame["time"].to_numpy(dtype=float),
                        y=frame["outcome"].to_numpy(dtype=float), prior_rate=prior_rate)
