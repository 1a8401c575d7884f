"""Worker configuration, parsed from the single JSON argument on the command line."""

from __future__ import annotations

import json
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised when the worker config JSON is missing, malformed or out of range."""


@dataclass(frozen=True)
class WorkerConfig:
    dataset: str = "synthetic"
    resolution: int = 32
    channels: int = 3
    classes: int = 10
    epochs: int = 0
    batch_size: int = 32
    device: str = "cpu"
    time_limit_s: float = 60.0
    seed: int = 0

    def __post_init__(self) -> None:
        problems = []
        if not self.dataset:
            problems.append("dataset: must be a non-empty name")
        if self.resolution < 1:
            problems.append(f"resolution: must be >= 1, got {self.resolution}")
        if self.channels < 1:
            problems.append(f"channels: must be >= 1, got {self.channels}")
        if self.classes < 2:
            problems.append(f"classes: must be >= 2, got {self.classes}")
        if self.epochs < 0:
            problems.append(f"epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if not self.time_limit_s > 0:
            problems.append(f"time_limit_s: must be > 0, got {self.time_limit_s}")
        if problems:
            raise ConfigError("; ".join(problems))


_INT_FIELDS = {"resolution", "channels", "classes", "epochs", "batch_size", "seed"}


def parse_config(argument: str) -> WorkerConfig:
    """Decode the config JSON passed as the worker's only positional argument."""
    try:
        raw = json.loads(argument)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    known = set(WorkerConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced: dict = {}
    for key, value in raw.items():
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key}: must be an integer, got {value!r}")
            coerced[key] = value
        elif key == "time_limit_s":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"time_limit_s: must be a number, got {value!r}")
            coerced[key] = float(value)
        elif not isinstance(value, str):
            raise ConfigError(f"{key}: must be a string, got {value!r}")
        else:
            coerced[key] = value
    return WorkerConfig(**coerced)
