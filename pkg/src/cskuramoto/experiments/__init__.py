"""Scenario runners, configuration and the command-line interface."""
from .config import ConfigError, ExperimentConfig, InitSpec, load_config
from .presets import preset
from .scenarios import (RateFit, fit_rate, scenario_convergence_rate, scenario_dissipation, scenario_equivalence,
                        scenario_mean_field, scenario_simulate, scenario_stability)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "InitSpec",
    "RateFit",
    "fit_rate",
    "load_config",
    "preset",
    "scenario_convergence_rate",
    "scenario_dissipation",
    "scenario_equivalence",
    "scenario_mean_field",
    "scenario_simulate",
    "scenario_stability",
]
