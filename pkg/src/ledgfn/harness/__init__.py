"""Experiment orchestration: configs, presets, training loop, checkpoints, comparisons, CLI."""

from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .compare import compare, comparison_table, run_arms
from .config import EnvConfig, RunConfig, load_config
from .presets import PRESETS, preset, with_objective
from .trainer import CSV_COLUMNS, RunRecord, Trainer, csv_text, run, run_seed, write_csv

__all__ = [
    "load_checkpoint", "save_checkpoint", "compare", "comparison_table", "run_arms", "EnvConfig",
    "RunConfig", "load_config", "PRESETS", "preset", "with_objective", "CSV_COLUMNS", "RunRecord",
    "Trainer", "csv_text", "run", "run_seed", "write_csv",
]
