"""Discrete-event simulator for many-adapter LLM serving nodes."""

from .engine import RunResult, Simulation, SimulationInvariantError, simulate
from .metrics import MetricsRecord, RunSummary, percentile, summarize
from .model import SimulationConfig, config_from_dict, validate_config

__all__ = [
    "MetricsRecord",
    "RunResult",
    "RunSummary",
    "Simulation",
    "SimulationConfig",
    "SimulationInvariantError",
    "config_from_dict",
    "percentile",
    "simulate",
    "summarize",
    "validate_config",
]
