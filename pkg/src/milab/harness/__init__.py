"""Experiment orchestration: configuration, caching, the privacy game and
its CLI."""

from .config import (ConfigError, DatasetConfig, ExperimentConfig,
                     NeighborhoodConfig, config_from_dict, load_config,
                     replace_config)
from .runner import (CostReport, GameResult, StageError, account_cost,
                     run_ablation, run_privacy_game, run_static_baseline,
                     verify_manifest)

__all__ = [
    "ConfigError", "DatasetConfig", "ExperimentConfig", "NeighborhoodConfig",
    "config_from_dict", "load_config", "replace_config", "CostReport",
    "GameResult", "StageError", "account_cost", "run_ablation",
    "run_privacy_game", "run_static_baseline", "verify_manifest",
]
