"""
Configuration module for paver.
"""
import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path(__file__).resolve().parent / "config.json"

# environment variable -> dotted config key
ENV_OVERRIDES = {
    "PAVER_STATE_LIMIT": "expansion.state_limit",
    "PAVER_LOG_LEVEL": "logging.level",
    "PAVER_SEED": "simulation.seed",
    "PAVER_RUNS": "simulation.runs",
    "PAVER_STEP_CAP": "simulation.step_cap",
}


class Config:
    """Configuration management class."""

    def __init__(self, config_file: Optional[str] = None, use_env: bool = True):
        if use_env:
            load_dotenv()
        self.config_file = str(config_file or os.environ.get("PAVER_CONFIG") or DEFAULT_CONFIG_FILE)
        self.config = self.load_config()
        if use_env:
            self.apply_environment()

    def load_config(self) -> Dict[str, Any]:
        """Load configuration from JSON file, layered over the defaults."""
        merged = self.get_default_config()
        try:
            with open(self.config_file, "r") as f:
                loaded = json.load(f)
        except FileNotFoundError:
            logger.warning(f"Config file {self.config_file} not found. Using default values.")
            return merged
        except json.JSONDecodeError as e:
            logger.error(f"Error parsing config file: {e}. Using default values.")
            return merged
        _deep_update(merged, loaded)
        return merged

    def get_default_config(self) -> Dict[str, Any]:
        """Return default configuration."""
        return {
            "expansion": {"state_limit": 100000},
            "equivalence": {"default_mode": "rooted-branching"},
            "simulation": {"runs": 100000, "step_cap": 1000, "seed": 20240601},
            "output": {"decimal_digits": 12},
            "logging": {
                "level": "WARNING",
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                "file": None,
            },
        }

    def apply_environment(self):
        """Override values from PAVER_* environment variables."""
        for variable, key in ENV_OVERRIDES.items():
            raw = os.environ.get(variable)
            if raw is None:
                continue
            current = self.get(key)
            try:
                value = type(current)(raw) if isinstance(current, (int, float)) else raw
            except ValueError:
                logger.error(f"Ignoring {variable}={raw!r}: expected {type(current).__name__}")
                continue
            self.update(key, value)

    def get(self, key: str, default=None):
        """Get configuration value by dotted key."""
        value: Any = self.config
        for part in key.split("."):
            if not isinstance(value, dict) or part not in value:
                return default
            value = value[part]
        return value

    def update(self, key: str, value: Any):
        """Update configuration value."""
        keys = key.split(".")
        config = self.config
        for k in keys[:-1]:
            config = config.setdefault(k, {})
        config[keys[-1]] = value

    def save(self):
        """Save configuration to file."""
        with open(self.config_file, "w") as f:
            json.dump(self.config, f, indent=2)


def _deep_update(base: Dict[str, Any], overrides: Dict[str, Any]):
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = copy.deepcopy(value)


# Global config instance
config = Config()
