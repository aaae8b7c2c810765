"""Experiment harness: datasets, single runs, sweeps and the command line."""
from .experiment import ExperimentConfig, ExperimentResult, MetricsRow, run_experiment

__all__ = ["ExperimentConfig", "ExperimentResult", "MetricsRow", "run_experiment"]
