"""Declarative experiments: YAML configs, seeded runs, persisted traces and comparisons."""

from pathlib import Path

from .config import AlgorithmSpec, ConfigError, ExperimentConfig, ModelSpec, SubspaceSpec, TuningSpec
from .runner import (
    BudgetError,
    compare_experiments,
    iterations_for_budget,
    prepare,
    projected_evaluations,
    resolve_iterations,
    run_experiment,
)

CONFIG_DIR = Path(__file__).parent / "configs"

__all__ = [
    "AlgorithmSpec",
    "BudgetError",
    "ConfigError",
    "ExperimentConfig",
    "ModelSpec",
    "SubspaceSpec",
    "TuningSpec",
    "compare_experiments",
    "iterations_for_budget",
    "prepare",
    "projected_evaluations",
    "resolve_iterations",
    "run_experiment",
]
