"""Configuration management for the ECG classification pipeline.

Run settings are resolved in increasing priority: dataclass defaults, the
``.env`` file / environment, a JSON file with flat dotted keys, and finally
command-line overrides.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv

from .constants import DEFAULT_SEED, RUN_CONFIG_FILE
from .dataset import DataConfig
from .errors import ConfigError
from .logging_config import logger
from .model import ResNetConfig
from .synthgen import SynthDefaults
from .training import TrainConfig
from .utils import atomic_write_text


def get_application_path():
    """Project root: two levels up from src/back/config.py."""
    current_file = os.path.abspath(__file__)
    return os.path.dirname(os.path.dirname(os.path.dirname(current_file)))


def load_env():
    """Load the .env file next to the application, if present."""
    env_path = os.path.join(get_application_path(), '.env')
    load_dotenv(env_path)
    return {
        'application_path': get_application_path(),
        'seed': os.getenv('CARDIORA_SEED'),
        'out_dir': os.getenv('CARDIORA_OUT'),
        'log_level': os.getenv('LOG_LEVEL'),
    }


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run; written next to its outputs as run_config.json."""

    model: ResNetConfig = field(default_factory=ResNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthDefaults = field(default_factory=SynthDefaults)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = DEFAULT_SEED


_SECTIONS = ("model", "train", "synth", "data")


def flatten_config(config: RunConfig) -> Dict[str, Any]:
    """Return the config as a flat ``{"section.field": value}`` mapping."""
    flat = {"seed": config.seed}
    for section in _SECTIONS:
        for key, value in dataclasses.asdict(getattr(config, section)).items():
            flat[f"{section}.{key}"] = list(value) if isinstance(value, tuple) else value
    return flat


def _coerce(value, default):
    """Convert a string (or JSON value) to the type of the field default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"Expected a boolean, got {value!r}")
    if default is None:
        if value is None or str(value).strip().lower() in ("", "none", "null"):
            return None
        return int(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"Expected an integer, got {value!r}")
        return int(float(value)) if isinstance(value, str) else int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return tuple(type(default[0])(v) if default else v for v in value)
    return type(default)(value)


def _apply(config: RunConfig, flat: Mapping[str, Any], origin: str) -> RunConfig:
    sections = {name: dataclasses.asdict(getattr(config, name)) for name in _SECTIONS}
    seed = config.seed
    for key, value in flat.items():
        if key == "seed":
            try:
                seed = int(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{origin}: seed must be an integer, got {value!r}") from e
            if not 0 <= seed < 2 ** 64:
                raise ConfigError(f"{origin}: seed must lie in [0, 2**64), got {seed}")
            continue
        section, _, name = key.partition(".")
        if section not in sections or name not in sections[section]:
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        default = getattr(getattr(config, section), name)
        try:
            sections[section][name] = _coerce(value, default)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{origin}: bad value for {key!r}: {value!r}") from e
    return RunConfig(
        model=ResNetConfig(**sections["model"]),
        train=TrainConfig(**sections["train"]),
        synth=SynthDefaults(**sections["synth"]),
        data=DataConfig(**sections["data"]),
        seed=seed,
    )


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Resolve the run configuration (defaults < env < JSON file < overrides)."""
    env = load_env()
    config = RunConfig()
    if env['seed'] is not None:
        config = _apply(config, {"seed": env['seed']}, "CARDIORA_SEED")

    if path:
        try:
            with open(path) as f:
                flat = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(flat, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object of dotted keys")
        config = _apply(config, flat, path)
        logger.debug(f"Loaded config file {path} ({len(flat)} keys)")

    if overrides:
        config = _apply(config, overrides, "command line")

    # Surface invariant violations before any work starts
    config.model.validate()
    config.train.validate()
    config.data.validate()
    return config


def write_frozen_config(out_dir: str, config: RunConfig) -> str:
    """Write the resolved config as run_config.json in out_dir."""
    path = os.path.join(out_dir, RUN_CONFIG_FILE)
    atomic_write_text(path, json.dumps(flatten_config(config), indent=2, sort_keys=True) + "\n")
    return path
