"""Multi-arm comparison: per-round mean and std across seeds, as one wide CSV."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..exceptions import ConfigError
from .config import RunConfig
from .trainer import RunRecord, run_seed

COMPARE_METRICS = ("modes", "topk_mean", "loss_policy", "oracle_terminal", "oracle_intermediate")


def _check(configs) -> None:
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    first = configs[0]
    for c in configs[1:]:
        if c.env != first.env:
            raise ConfigError(f"arm {c.arm_label!r} uses env {c.env} but {first.arm_label!r} uses {first.env}")
        if tuple(c.seeds) != tuple(first.seeds):
            raise ConfigError(f"arm {c.arm_label!r} uses seeds {c.seeds} but {first.arm_label!r} uses {first.seeds}")
    labels = [c.arm_label for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"arm labels must be unique, got {labels}")


def _job(args):
    config_text, seed, out, write = args
    return run_seed(RunConfig.from_text(config_text), seed, out, write)


def run_arms(configs, output_dir=None, workers=1, write=True) -> dict[str, list[RunRecord]]:
    """Train every (arm, seed) pair; workers > 1 uses independent processes."""
    _check(configs)
    jobs = [(c.to_text(), s, output_dir if output_dir is not None else c.output_dir, write)
            for c in configs for s in c.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_job, jobs))
    else:
        records = [_job(j) for j in jobs]
    out, i = {}, 0
    for c in configs:
        out[c.arm_label] = records[i: i + len(c.seeds)]
        i += len(c.seeds)
    return out


def comparison_table(results: dict[str, list[RunRecord]], metrics=COMPARE_METRICS):
    """Rows keyed by round with ``<arm>:<metric>_mean`` / ``_std`` columns (population std)."""
    rounds = sorted({row["round"] for recs in results.values() for rec in recs for row in rec.rows})
    columns = ["round"] + [f"{arm}:{m}_{s}" for arm in results for m in metrics for s in ("mean", "std")]
    table = []
    for r in rounds:
        row = {"round": r}
        for arm, recs in results.items():
            for m in metrics:
                vals = [x[m] for rec in recs for x in rec.rows if x["round"] == r and x[m] is not None]
                row[f"{arm}:{m}_mean"] = float(np.mean(vals)) if vals else None
                row[f"{arm}:{m}_std"] = float(np.std(vals)) if vals else None
        table.append(row)
    return columns, table


def write_table(path, columns, table) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in table:
            fh.write(",".join("" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in columns) + "\n")


def compare(configs, output_path=None, workers=1, write_runs=True):
    results = run_arms(configs, workers=workers, write=write_runs)
    columns, table = comparison_table(results)
    if output_path is not None:
        write_table(output_path, columns, table)
    return columns, table, results
