"""Deterministic simulations: the mixed marketplace scenario plus focused liveness, double-spend and throughput models."""
from .config import AttackKind, ConfigInvalid, SimConfig, from_ini, load_config, to_ini
from .report import MetricsReport
from .scenario import Scenario, run_scenario

__all__ = [
    "AttackKind",
    "ConfigInvalid",
    "MetricsReport",
    "Scenario",
    "SimConfig",
    "from_ini",
    "load_config",
    "run_scenario",
    "to_ini",
]
