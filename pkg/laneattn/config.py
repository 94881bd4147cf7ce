"""laneattn.config

Load the JSON configuration file (sections `model`, `train`, `scenarios`).
"""
import json
import logging
import os
from dataclasses import fields
from typing import Optional, Tuple

from laneattn.errors import ConfigError
from laneattn.model import ModelConfig
from laneattn.scenarios import ScenarioDefaults
from laneattn.training import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "laneattn_config.json"
_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "scenarios": ScenarioDefaults}


def _section(raw: dict, name: str, cls):
    values = raw.get(name, {})
    if not isinstance(values, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    for key in sorted(set(values) - known):
        logger.warning("ignoring unknown config key %s.%s", name, key)
    try:
        return cls.from_dict(values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{name}': {exc}") from None


def load_config(path: Optional[str] = None) -> Tuple[ModelConfig, TrainConfig, ScenarioDefaults]:
    """Read the config file; a missing file gives the defaults."""
    path = path or DEFAULT_CONFIG_FILE
    raw = {}
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for key in sorted(set(raw) - set(_SECTIONS)):
            logger.warning("ignoring unknown config section '%s'", key)
        logger.debug("loaded config from %s", path)
    else:
        logger.debug("no config at %s, using defaults", path)
    return (_section(raw, "model", ModelConfig), _section(raw, "train", TrainConfig),
            _section(raw, "scenarios", ScenarioDefaults))
