"""Grid execution and CSV / JSON export."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..config import RunConfig
from ..diagnostics import trace_summary
from ..quant import QuantizationFailure
from ..simclock import run

CSV_COLUMNS = (
    "run_id", "algo", "seed", "t", "sim_time", "total_local_steps", "train_loss", "accuracy",
    "grad_norm_mu_sq", "grad_norm_server_sq", "phi", "cum_bits", "empirical_H", "decode_failures",
)
SUMMARY_NAME = "summary.json"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trace_rows(trace):
    for r in trace.records:
        yield [
            trace.run_id, trace.algo, trace.seed, r.t, r.sim_time, r.total_local_steps, r.train_loss,
            r.accuracy, r.grad_norm_mu_sq, r.grad_norm_server_sq, r.phi, r.cum_bits, r.empirical_H,
            r.decode_failures,
        ]


def write_csv(trace, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in trace_rows(trace):
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class CellResult:
    config_index: int
    seed: int
    run_id: str
    csv_path: str = ""
    summary: dict = field(default_factory=dict)
    failure: dict = None


def _run_cell(args) -> CellResult:
    index, cfg_dict, seed, out_dir = args
    cfg = RunConfig.from_dict(cfg_dict)
    run_id = cfg.run_id(seed)
    try:
        trace = run(cfg, seed=seed)
    except QuantizationFailure as exc:
        return CellResult(index, seed, run_id, failure={"run_id": run_id, "config": cfg_dict, "seed": seed,
                                                        "t": exc.t, "side": exc.who})
    path = write_csv(trace, Path(out_dir) / f"{run_id}.csv")
    return CellResult(index, seed, run_id, str(path), trace_summary(trace))


@dataclass
class GridResult:
    exit_code: int
    csv_paths: list
    summary_path: Path
    failures: list


def run_grid(configs, parallelism: int = 1, out_dir=None, seeds=None) -> GridResult:
    """Run every (config, seed) cell and write one CSV per cell plus a summary.

    A strict-mode decode failure does not stop the other cells; it shows up
    in the summary and makes the exit code nonzero.
    """
    out = Path(out_dir or os.environ.get("QUAFL_SIM_OUT") or "quafl_out")
    out.mkdir(parents=True, exist_ok=True)
    configs = [c.validate() for c in configs]
    cells = [
        (k, cfg.to_dict(), seed, str(out))
        for k, cfg in enumerate(configs)
        for seed in (seeds if seeds is not None else cfg.seeds)
    ]
    ids = [configs[k].run_id(seed) for k, _, seed, _ in cells]
    if len(set(ids)) != len(ids):
        raise ValueError("grid contains duplicate (config, seed) cells")

    if parallelism > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]

    failures = [r.failure for r in results if r.failure]
    per_config = []
    for k, cfg in enumerate(configs):
        done = [r.summary for r in results if r.config_index == k and not r.failure]
        losses = [s["final_loss"] for s in done]
        per_config.append({
            "index": k,
            "config": cfg.to_dict(),
            "runs": [s["run_id"] for s in done],
            "mean_final_loss": sum(losses) / len(losses) if losses else None,
        })
    summary = {
        "runs": [r.summary for r in results if not r.failure],
        "configs": per_config,
        "failures": failures,
    }
    summary_path = out / SUMMARY_NAME
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return GridResult(1 if failures else 0, [r.csv_path for r in results if not r.failure], summary_path, failures)
