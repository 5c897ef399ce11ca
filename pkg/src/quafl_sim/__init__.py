"""Seed-reproducible simulator for quantized asynchronous federated averaging."""

from .config import ConfigError, RunConfig, TaskSpec, TimingProfile
from .simclock import SimTrace, Simulator, build_schedule, run

__all__ = [
    "ConfigError",
    "RunConfig",
    "SimTrace",
    "Simulator",
    "TaskSpec",
    "TimingProfile",
    "build_schedule",
    "run",
]

__version__ = "0.1.0"
