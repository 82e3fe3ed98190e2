"""Experiment harness: configs, variants, runs, reports, CLI."""

from .config import ExperimentConfig, config_hash, from_dict, from_file
from .variants import ALL_VARIANTS, plan_variant

__all__ = ["ExperimentConfig", "config_hash", "from_dict", "from_file",
           "ALL_VARIANTS", "plan_variant"]
