"""Simulation and analysis of rank-based Brownian particle systems."""
from .conditions import Classification, ConditionReport, classify
from .infinite import InfiniteSpec, simulate_infinite
from .model import SystemSpec, rank_resolve, spacings, validate_spec
from .sim import Trajectory, event_driven_path, local_time_occupation, local_time_tanaka, simulate_path

__all__ = [
    "Classification", "ConditionReport", "classify", "InfiniteSpec", "simulate_infinite",
    "SystemSpec", "rank_resolve", "spacings", "validate_spec", "Trajectory",
    "event_driven_path", "local_time_occupation", "local_time_tanaka", "simulate_path",
]
__version__ = "0.1.0"
