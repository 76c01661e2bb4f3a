"""Discrete-event model of bridge-intercepted remote memory access."""

from .config import ConfigError, SimConfig, load_config
from .metrics import Metrics
from .sim import DeadlockError, Simulation

__all__ = [
    "ConfigError",
    "DeadlockError",
    "Metrics",
    "SimConfig",
    "Simulation",
    "load_config",
]

__version__ = "0.1.0"
