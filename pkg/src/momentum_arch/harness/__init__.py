"""Experiment configuration, training runs, metrics, comparison and verification."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config_text
from .runner import RunResult, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "RunResult", "load_config", "parse_config_text", "run_experiment"]
