"""Training configuration"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import os
from typing import Any, Dict, Optional, Tuple

import rtoml as toml

import prognost.constants as constants
from prognost.errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Architecture and optimizer hyper-parameters. Persisted as a TOML file
    whose keys are exactly the field names."""

    hidden_dims: Tuple[int, ...] = constants.default_hidden_dims
    learning_rate: float = constants.default_learning_rate
    batch_size: int = constants.default_batch_size
    epochs: int = constants.default_epochs
    window: int = constants.default_window
    loss_mode: str = "mse"
    seed: int = constants.default_seed
    beta1: float = constants.default_beta1
    beta2: float = constants.default_beta2
    epsilon: float = constants.default_epsilon
    split_ratio: float = constants.default_split_ratio
    clip_norm: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        for name, value in [("hidden_dims", dim) for dim in self.hidden_dims] + [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("window", self.window),
            ("seed", self.seed),
        ]:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must hold integers, got {value!r}")
        if not self.hidden_dims or any(dim < 1 for dim in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive sizes, got {list(self.hidden_dims)}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must not be negative, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie strictly between 0 and 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.window < 1:
            raise ConfigError(f"window must be at least 1, got {self.window}")
        if self.loss_mode not in constants.loss_modes:
            raise ConfigError(
                f"loss_mode must be one of {constants.loss_modes}, got {self.loss_mode!r}"
            )
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie strictly between 0 and 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when set")

    @staticmethod
    def from_dict(config_dict: Dict[str, Any]) -> TrainConfig:
        known = {field.name for field in fields(TrainConfig)}
        unknown = set(config_dict) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return TrainConfig(**config_dict)
        except TypeError as error:
            raise ConfigError(str(error)) from error

    @staticmethod
    def load(path: str) -> TrainConfig:
        """Load a config from a TOML file"""
        try:
            with open(path, encoding="utf-8") as toml_file:
                config_dict = toml.load(toml_file)
        except toml.TomlParsingError as error:
            raise ConfigError(f"{path}: {error}") from error
        return TrainConfig.from_dict(config_dict)

    def write(self, path: str) -> None:
        """Serialize and write the config as TOML"""
        directory = os.path.dirname(path)
        if directory and not os.path.exists(directory):
            os.makedirs(directory, exist_ok=True)
        config_dict = {
            key: list(value) if isinstance(value, tuple) else value
            for key, value in asdict(self).items()
            if value is not None
        }
        with open(path, "w", encoding="utf-8") as toml_file:
            toml.dump(config_dict, toml_file)

    def override(self, **changes: Any) -> TrainConfig:
        """Copy with the non-None entries of `changes` applied"""
        return replace(self, **{key: value for key, value in changes.items() if value is not None})
