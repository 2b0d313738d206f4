"""Cross-validated training, pruning experiments, baselines and reports."""
from .config import ArchitectureConfig, ExperimentConfig, OptimizerConfig, ScheduleConfig
from .experiment import aggregate, run_experiment, run_job
from .report import AccuracySummary, MetricsReport, emit_report, render_table
from .threshold import ThresholdClassifier, ThresholdResult, threshold_baseline, window_deviation_scores
from .training import EvalResult, FoldResult, evaluate, evaluate_logits, load_dataset, predict_logits, train

__all__ = [
    "ArchitectureConfig",
    "ExperimentConfig",
    "OptimizerConfig",
    "ScheduleConfig",
    "aggregate",
    "run_experiment",
    "run_job",
    "AccuracySummary",
    "MetricsReport",
    "emit_report",
    "render_table",
    "ThresholdClassifier",
    "ThresholdResult",
    "threshold_baseline",
    "window_deviation_scores",
    "EvalResult",
    "FoldResult",
    "evaluate",
    "evaluate_logits",
    "load_dataset",
    "predict_logits",
    "train",
]
