"""Built-in configurations, one per scenario; used when ``--config`` is omitted.

These are the settings the acceptance suite runs.
"""
from __future__ import annotations

from .config import ExperimentConfig, InitSpec

_PRESETS = {
    "dissipation": dict(d=(1, 2, 3), alpha=(0.25, 0.5, 0.75), N=(16, 64, 256), T=2.0, sample_dt=0.05,
                        rtol=1e-7, atol=1e-10),
    "equivalence": dict(d=(1, 2), alpha=(0.5,), N=(2, 32), epsilons=(1e-2, 1e-3, 1e-4), T=1.0, sample_dt=0.05,
                        rtol=1e-10, atol=1e-13, closed_form=True),
    "convergence_rate": dict(d=(2,), alpha=(0.5,), N=(64,), T=10.0, sample_dt=0.1, ensembles=5,
                             closed_form=True, rtol=1e-10, atol=1e-13),
    "stability": dict(d=(2,), alpha=(0.5,), N=(64,), T=5.0, sample_dt=0.1, ensembles=5, perturbation=1e-3,
                      rtol=1e-10, atol=1e-13),
    "mean_field": dict(d=(1,), alpha=(0.5,), N=(64, 128, 256, 512), T=1.0, sample_dt=0.1, ensembles=3,
                       init=InitSpec(y_kind="omega", y_range=(-1.0, 1.0)), rtol=1e-6, atol=1e-9),
    "simulate": dict(d=(2,), alpha=(0.5,), N=(16,), T=1.0, sample_dt=0.1),
}


def preset(scenario: str) -> ExperimentConfig:
    return ExperimentConfig(scenario=scenario, **_PRESETS[scenario])
