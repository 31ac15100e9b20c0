"""Black-box video adversarial attack via region-masked photorealistic style
transfer and query-efficient zeroth-order fine-tuning."""

from .core import (AttackConfig, AttackGoal, ClassifierOracle, ConfigError,
                   Prediction, Video, clamp_video, export_frames, load_video)
from .blackbox import AttackResult, finetune, nes_gradient, pgd_step
from .pipeline import AttackAdapters, MetricsReport, compute_metrics, run_attack

__all__ = [
    "AttackAdapters", "AttackConfig", "AttackGoal", "AttackResult",
    "ClassifierOracle", "ConfigError", "MetricsReport", "Prediction", "Video",
    "clamp_video", "compute_metrics", "export_frames", "finetune",
    "load_video", "nes_gradient", "pgd_step", "run_attack",
]

__version__ = "0.1.0"
