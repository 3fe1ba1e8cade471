"""GRPO training stack with cross-dataset logistic reward normalization."""
from __future__ import annotations

from .grpo import ClipConfig, GroupRollout, TrainConfig, group_advantages, train_step
from .normalization import PercentileStats, StatsTable, fit_percentile_stats, normalize
from .tasks import TaskKind

__version__ = "0.1.0"

__all__ = [
    "ClipConfig",
    "GroupRollout",
    "PercentileStats",
    "StatsTable",
    "TaskKind",
    "TrainConfig",
    "fit_percentile_stats",
    "group_advantages",
    "normalize",
    "train_step",
]
