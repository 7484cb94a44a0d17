"""
Experiment configuration: defaults < config file < environment < flags.

Config files use the dotenv grammar (KEY=VALUE per line, # comments,
optional quotes) and are read with dotenv_values. Keys are case-insensitive.
Every layer is a flat dict of raw values merged with deepMerge; validation
happens once, when the merged dict is turned into an ExperimentConfig.
"""

import os
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from lab.tools.model_core import AtomicMeasure, ModelParams, Polynomial
from utils.contracts import ExperimentConfig
from utils.errors import ConfigError, RegimeError
from utils.logger import get_logger
from utils.state import deepMerge

logger = get_logger(__name__)

DEFAULTS: Dict[str, Any] = {
    "sigma": 1.0,
    "mu": 1.0,
    "alpha": 1.0,
    "beta": 0.5,
    "dim": 1,
    "critical": False,
    "f": "x",
    "nu": "1@0",
    "horizon": 8.0,
    "laplace_time": 1.0,
    "thetas": "0.5,1,2",
    "resolution": 200,
    "replicas": 5000,
    "seed": 20240601,
    "regime": None,
    "survival_proxy": "alive",
    "mechanism": "super",
    "workers": 1,
    "v_draws": 10000,
    "output_dir": "data/runs",
    "population_cap": 2_000_000,
}

# desk-scale profile for --quick
QUICK: Dict[str, Any] = {
    "replicas": 1000,
    "resolution": 20,
    "horizon": 3.0,
    "v_draws": 5000,
}

ENV_KEYS = {
    "OUSUPER_SEED": "seed",
    "OUSUPER_WORKERS": "workers",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def read_config_file(path) -> Dict[str, Any]:
    """Raw key-value layer from a dotenv-grammar file; unknown keys are an error."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    raw = dotenv_values(path)
    layer = {}
    for key, value in raw.items():
        name = key.strip().lower()
        if name not in DEFAULTS:
            raise ConfigError(f"{path}: unknown config key '{key}'")
        if value is None:
            raise ConfigError(f"{path}: key '{key}' has no value")
        layer[name] = value
    return layer


def env_layer(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    environ = os.environ if environ is None else environ
    return {name: environ[var] for var, name in ENV_KEYS.items() if environ.get(var)}


def _as_bool(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _as_floats(value: Any, key: str) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    try:
        return [float(v) for v in str(value).split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {value!r}") from e


def merge_layers(*layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    merged: Dict[str, Any] = {}
    for layer in layers:
        if layer:
            deepMerge(merged, {k: v for k, v in layer.items() if v is not None})
    return merged


def params_from(values: Mapping[str, Any]) -> ModelParams:
    try:
        dim = int(values["dim"])
        critical = _as_bool(values.get("critical", False), "critical")
        data = {
            "sigma": float(values["sigma"]),
            "mu": float(values["mu"]),
            "beta": float(values["beta"]),
            "dim": dim,
            "critical": critical,
        }
        if not critical:
            data["alpha"] = float(values["alpha"])
        return ModelParams(**data)
    except (ValidationError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid model parameters: {e}") from e


def build_config(
    config_file: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    quick: bool = False,
    environ: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """Layer defaults, quick profile, file, environment and flag overrides, then validate."""
    file_layer = read_config_file(config_file) if config_file else {}
    values = merge_layers(DEFAULTS, QUICK if quick else None, file_layer, env_layer(environ), overrides)
    params = params_from(values)
    try:
        f = Polynomial.parse(str(values["f"]), dim=params.dim)
        nu = AtomicMeasure.parse(str(values["nu"]), dim=params.dim)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    regime = values.get("regime")
    if regime is not None and str(regime).strip().lower() != params.regime().value:
        raise RegimeError(
            f"regime '{regime}' requested but parameters are '{params.regime().value}' "
            f"(alpha={params.alpha}, mu={params.mu})"
        )
    try:
        cfg = ExperimentConfig(
            params=params,
            f=f,
            nu=nu,
            horizon=float(values["horizon"]),
            laplace_time=float(values["laplace_time"]),
            thetas=_as_floats(values["thetas"], "thetas"),
            resolution=int(values["resolution"]),
            replicas=int(values["replicas"]),
            seed=int(values["seed"]),
            workers=int(values["workers"]),
            regime=params.regime(),
            survival_proxy=str(values["survival_proxy"]).strip().lower(),
            mechanism=str(values["mechanism"]).strip().lower(),
            v_draws=int(values["v_draws"]),
            population_cap=int(values["population_cap"]),
            output_dir=str(values["output_dir"]),
            quick=quick,
        )
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.debug(f"config {cfg.config_hash()}: {cfg.describe()}")
    return cfg
