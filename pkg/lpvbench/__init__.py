"""Experiment pipeline and command line for the incremental LPV toolkit."""
from __future__ import annotations

from .experiment import ExperimentConfig, load_experiment
from .pipeline import build_design, run_analyze, run_repro, run_simulate, run_synth

__all__ = [
    "ExperimentConfig",
    "build_design",
    "load_experiment",
    "run_analyze",
    "run_repro",
    "run_simulate",
    "run_synth",
]
