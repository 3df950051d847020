from .data import Dataset, DatasetFormatError, TrajectorySample, fraction_subset, train_val_split
from .loop import (
    METRIC_COLUMNS, TrainConfig, TrainResult, TrainingDivergedError, continuous_stats, evaluate,
    evaluate_accuracy, load_trained, save_trained, train, write_metrics_csv,
)
from .loss import compute_loss, one_hot

__all__ = [
    "Dataset", "DatasetFormatError", "TrajectorySample", "fraction_subset", "train_val_split",
    "METRIC_COLUMNS", "TrainConfig", "TrainResult", "TrainingDivergedError", "continuous_stats", "evaluate",
    "evaluate_accuracy", "load_trained", "save_trained", "train", "write_metrics_csv",
    "compute_loss", "one_hot",
]
