"""Configuration, orchestration and output for seeded experiments."""

from .config import ExperimentConfig, build_config, config_hash, load_config
from .runner import RunRecord, run_experiment, slope

__all__ = ["ExperimentConfig", "RunRecord", "build_config", "config_hash", "load_config",
           "run_experiment", "slope"]
