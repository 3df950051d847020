from .config import SCHEMA, ConfigError, ExperimentConfig, describe
from .experiments import (
    TOY_COLUMNS, VARIANT_FLAGS, ToyRow, attention_overlay, collect, make_worlds, onpolicy_summary, run_onpolicy,
    run_toy, toy_csv_rows, toy_datasets, toy_summary, train_variant, upsample_bilinear, worker_count,
)

__all__ = [
    "SCHEMA", "ConfigError", "ExperimentConfig", "describe",
    "TOY_COLUMNS", "VARIANT_FLAGS", "ToyRow", "attention_overlay", "collect", "make_worlds", "onpolicy_summary",
    "run_onpolicy", "run_toy", "toy_csv_rows", "toy_datasets", "toy_summary", "train_variant", "upsample_bilinear",
    "worker_count",
]
