"""Experiment orchestration: synthetic data, pipelines, persistence, CLI."""

from sptk.xprunner.synth import SyntheticDatasetSpec, gen_synthetic_dataset
from sptk.xprunner.config import ExperimentConfig, load_experiment_config
from sptk.xprunner.experiments import (
    MICRO_PROFILE,
    run,
    size_sweep,
    verify_provenance,
)

__all__ = [
    "SyntheticDatasetSpec",
    "gen_synthetic_dataset",
    "ExperimentConfig",
    "load_experiment_config",
    "MICRO_PROFILE",
    "run",
    "size_sweep",
    "verify_provenance",
]
