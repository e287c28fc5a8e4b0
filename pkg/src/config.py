"""
Settings and logging setup shared by the CLI and the experiment harness.
"""

import copy
import logging
import logging.config
import os
from pathlib import Path
from typing import Dict, Optional

import yaml
from dotenv import load_dotenv

PACKAGE_ROOT = Path(__file__).resolve().parent.parent
SETTINGS_FILE = PACKAGE_ROOT / "config" / "settings.yaml"
LOGGING_FILE = PACKAGE_ROOT / "config" / "logging.yaml"

DEFAULT_SETTINGS: Dict = {
    "correction": {"mode": "mean", "xi": 10.0},
    "exploration": {"fd_step": 1e-4, "hessian_step": 1e-2, "dz": 0.75, "dpi": 4.5,
                    "axis_cap": 9, "max_points": 10000, "fine_points": 200},
    "mcmc": {"n_iter": 120000, "burn_in": 20000, "thin": 10, "n_chains": 2,
             "adapt_batch": 100, "target_acceptance": 0.44, "ar1_gibbs": True},
    "experiments": {"replicates": 100, "exclusion_limit": 0.05, "output_dir": "results"},
    "runtime": {"threads": 1},
    "logging": {"config": "config/logging.yaml"},
}

_ENV_OVERRIDES = {
    "COPULA_INLA_THREADS": ("runtime", "threads", int),
    "COPULA_INLA_XI": ("correction", "xi", float),
    "COPULA_INLA_OUTPUT_DIR": ("experiments", "output_dir", str),
}


def _deep_merge(base: Dict, update: Dict) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(path: Optional[str] = None) -> Dict:
    """Load configuration from YAML, fill gaps from defaults, apply environment overrides"""
    load_dotenv()
    config_file = Path(path) if path else SETTINGS_FILE
    loaded: Dict = {}
    try:
        if config_file.exists():
            with open(config_file, "r") as f:
                loaded = yaml.safe_load(f) or {}
            if not isinstance(loaded, dict):
                raise ValueError("settings file must hold a mapping")
    except (OSError, ValueError, yaml.YAMLError) as e:
        logging.warning(f"Failed to load config {config_file}: {e}")
        loaded = {}

    settings = _deep_merge(DEFAULT_SETTINGS, loaded)
    for env_name, (section, key, cast) in _ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw:
            try:
                settings[section][key] = cast(raw)
            except ValueError:
                logging.warning(f"Ignoring {env_name}={raw!r}: not a valid {cast.__name__}")
    return settings


def setup_logging(settings: Optional[Dict] = None, level: Optional[str] = None):
    """Setup logging from the YAML dictConfig, falling back to basicConfig"""
    config_path = Path((settings or DEFAULT_SETTINGS)["logging"].get("config", LOGGING_FILE))
    if not config_path.is_absolute():
        config_path = PACKAGE_ROOT / config_path
    log_dir = Path("logs")
    log_dir.mkdir(exist_ok=True)
    try:
        with open(config_path, "r") as f:
            logging.config.dictConfig(yaml.safe_load(f))
    except (OSError, ValueError, yaml.YAMLError):
        logging.basicConfig(
            level=logging.INFO,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            handlers=[
                logging.FileHandler(log_dir / "copula_inla.log"),
                logging.StreamHandler(),
            ],
        )
    if level:
        logging.getLogger().setLevel(level.upper())
