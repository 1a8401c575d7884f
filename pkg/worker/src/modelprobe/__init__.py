"""Sandbox worker: compiles, measures and smoke-trains generated model sources."""

from .config import ConfigError, WorkerConfig, parse_config
from .probe import (
    ProbeError,
    handle_budget,
    handle_compile,
    handle_train,
    load_network,
    measure_flops,
    trainable_params,
)
from .server import main, respond, serve

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ProbeError",
    "WorkerConfig",
    "handle_budget",
    "handle_compile",
    "handle_train",
    "load_network",
    "main",
    "measure_flops",
    "parse_config",
    "respond",
    "serve",
    "trainable_params",
    "__version__",
]
