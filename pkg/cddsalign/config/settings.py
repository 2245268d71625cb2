"""
Settings for cddsalign

Built-in defaults are deep-merged with settings.json next to this module and,
optionally, with a user settings file. Profiles bundle the data, model, loss
and training defaults of one scale.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from cddsalign.core.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_PROFILE = "desk"
PROFILES = ("desk", "paper")


def default_settings() -> Dict[str, Any]:
    return {
        "default_profile": DEFAULT_PROFILE,
        "profiles": {
            # Desk scale: runs in minutes on one CPU core
            "desk": {
                "data": {
                    "n_pairs": 200,
                    "n_test": 100,
                    "n_v": 4,
                    "n_t": 6,
                    "d": 32,
                    "d_latent": 4,
                    "texts_per_image": 1,
                    "noise_std": 0.05,
                    "jitter_std": 0.1,
                    "seed": 1
                },
                "model": {"n_layers": 2, "z": 4, "noise_std": 0.1, "ffn_mult": 2},
                "losses": {"alpha_s": 1.0, "alpha_m": 0.1, "alpha_f": 0.5, "alpha_c": 0.0, "w_init": 0.5},
                "training": {
                    "epochs": 25,
                    "batch_size": 8,
                    "learning_rate": 1e-3,
                    "weight_decay": 1e-4,
                    "seed": 0,
                    "correlation_mode": "each-batch",
                    "n_bins": 32
                }
            },
            # Full scale: 512-d features, five captions per image
            "paper": {
                "data": {
                    "n_pairs": 29000,
                    "n_test": 1000,
                    "n_v": 49,
                    "n_t": 16,
                    "d": 512,
                    "d_latent": 64,
                    "texts_per_image": 5,
                    "noise_std": 0.05,
                    "jitter_std": 0.1,
                    "seed": 1
                },
                "model": {"n_layers": 2, "z": 4, "noise_std": 0.1, "ffn_mult": 2},
                "losses": {"alpha_s": 1.0, "alpha_m": 0.1, "alpha_f": 0.5, "alpha_c": 0.0, "w_init": 0.5},
                "training": {
                    "epochs": 25,
                    "batch_size": 64,
                    "learning_rate": 2e-4,
                    "weight_decay": 1e-4,
                    "seed": 0,
                    "correlation_mode": "each-batch",
                    "n_bins": 32
                }
            }
        },
        "output": {"root": "runs"},
        "logging": {
            "level": "INFO",
            "file": "cddsalign.log",
            "max_size": 1048576,  # 1 MB
            "backup_count": 3
        }
    }


class Settings:
    """
    Layered settings with dotted-key access.

    Usage:
        settings = Settings()
        profile = settings.profile("desk")
        level = settings.get("logging.level", "INFO")
    """

    def __init__(self, config_dir: Optional[Union[str, Path]] = None,
                 user_file: Optional[Union[str, Path]] = None):
        """
        Args:
            config_dir: Directory holding settings.json (defaults to this package)
            user_file: Extra settings file merged last; must exist when given
        """
        self.config_dir = Path(config_dir) if config_dir is not None else Path(__file__).parent
        self.settings_file = self.config_dir / "settings.json"
        self.user_file = Path(user_file) if user_file is not None else None
        self.settings = self._load_settings()
        logger.debug(f"Settings initialized from {self.settings_file}")

    @staticmethod
    def _read(path: Path) -> Dict[str, Any]:
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: settings must be a JSON object")
        return data

    def _load_settings(self) -> Dict[str, Any]:
        settings = default_settings()
        if self.settings_file.exists():
            self._deep_update(settings, self._read(self.settings_file))
        if self.user_file is not None:
            if not self.user_file.exists():
                raise FileNotFoundError(f"settings file not found: {self.user_file}")
            self._deep_update(settings, self._read(self.user_file))
            logger.info(f"Merged user settings from {self.user_file}")
        return settings

    def _deep_update(self, d: Dict[str, Any], u: Dict[str, Any]) -> Dict[str, Any]:
        for k, v in u.items():
            if isinstance(v, dict) and k in d and isinstance(d[k], dict):
                self._deep_update(d[k], v)
            else:
                d[k] = v
        return d

    def get(self, key: str, default: Any = None) -> Any:
        """
        Args:
            key: Setting key, dot notation for nested settings
            default: Value returned when the key is missing
        """
        value: Any = self.settings
        for part in key.split("."):
            if not isinstance(value, dict) or part not in value:
                return default
            value = value[part]
        return value

    def profile(self, name: Optional[str] = None) -> Dict[str, Any]:
        """A copy of one profile block; unknown names raise ConfigError"""
        name = name or self.get("default_profile", DEFAULT_PROFILE)
        profiles = self.get("profiles", {})
        if name not in profiles:
            raise ConfigError(f"unknown profile '{name}' (available: {sorted(profiles)})")
        return json.loads(json.dumps(profiles[name]))
