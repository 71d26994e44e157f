"""Deterministic ablation sweeps over configuration grids.

A cell is a named configuration; every (cell, seed) pair is one independent
run with its own RngState, so cells may execute in worker processes while
rows are still emitted in grid order.
"""
from __future__ import annotations

import csv
import io
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from artifact.io.config import Config
from artifact.model.blocks import PLACEMENTS
from artifact.model.network import TOGGLES
from artifact.pipeline.experiment import run_experiment, write_outputs
from artifact.pipeline.metrics import fmt
from artifact.pipeline.train import STAGE1_METRICS

CSV_HEADER = ("config_id", "seed", "final_train_acc", "final_test_acc", "gap", "params_trainable",
              "otdd_final")
TOTAL_BUDGET = 50
GRIDS = ("toggles", "placement", "metric", "kernel", "depth", "budget")


@dataclass
class Cell:
    config_id: str
    config: Config


@dataclass
class Row:
    config_id: str
    seed: int
    summary: dict | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def fields(self) -> list[str]:
        if self.summary is None:
            return [self.config_id, str(self.seed)] + [""] * 5
        s = self.summary
        out = [self.config_id, str(self.seed)]
        for key in CSV_HEADER[2:]:
            v = s[key]
            out.append("" if v is None else (str(v) if key == "params_trainable" else fmt(v)))
        return out


def toggle_overrides(name: str) -> dict:
    pae, sce, pva = TOGGLES[name]
    return {"toggle.pae": pae, "toggle.sce": sce, "toggle.pva": pva}


def build_grid(base: Config, grid: str) -> list[Cell]:
    """Cells of a named grid; every non-toggle grid varies the full A4 model."""
    if grid == "toggles":
        return [Cell(name, base.updated(toggle_overrides(name))) for name in TOGGLES]
    full = base.updated(toggle_overrides("A4"))
    if grid == "placement":
        return [Cell(f"placement={p}", full.updated({"adapter.placement": p})) for p in PLACEMENTS]
    if grid == "metric":
        return [Cell(f"metric={m}", full.updated({"otdd.metric": m})) for m in STAGE1_METRICS]
    if grid == "kernel":
        return [Cell(f"kernel={k}", full.updated({"adapter.kernel": k})) for k in (1, 3)]
    if grid == "depth":
        depth = base["model.depth"]
        return [Cell(f"depth={d}", full.updated({"adapter.depth": d})) for d in range(1, depth + 1)]
    if grid == "budget":
        cells = []
        for s1 in (0, 5, 10, 20):
            s2 = TOTAL_BUDGET - s1
            cells.append(Cell(f"stage1={s1}", full.updated({
                "schedule.stage1_epochs": s1, "schedule.stage2_epochs": s2,
                "schedule.warmup_epochs": min(full["schedule.warmup_epochs"], s2)})))
        return cells
    raise ValueError(f"unknown grid {grid!r}; choose from {GRIDS}")


def _run_cell(args) -> Row:
    cell, seed, out_dir = args
    try:
        result = run_experiment(cell.config, seed)
        if out_dir is not None:
            write_outputs(result, Path(out_dir) / f"{cell.config_id}_seed{seed}")
        return Row(cell.config_id, seed, result.summary())
    except Exception as exc:  # one bad cell must not end the sweep
        return Row(cell.config_id, seed, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")


def worker_count() -> int:
    raw = os.environ.get("ATA_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"ATA_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"ATA_THREADS must be >= 0, got {n}")
    return n


def run_ablation(cells: list[Cell], seeds, out_dir: str | Path | None = None,
                 workers: int | None = None) -> list[Row]:
    """One row per (cell, seed), in grid order; failures are kept as rows.

    ``workers`` defaults to ``ATA_THREADS`` (0 or unset runs in-process).
    With ``out_dir`` each run's outputs go to ``out_dir/<config_id>_seed<seed>``.
    """
    jobs = [(c, int(s), None if out_dir is None else str(out_dir)) for c in cells for s in seeds]
    workers = worker_count() if workers is None else workers
    if workers <= 0 or len(jobs) <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, jobs))


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.fields())
    return buf.getvalue()


def read_table(path: str | Path) -> list[dict]:
    """Rows of a summary CSV as dicts of floats (None for empty fields)."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: header is not {','.join(CSV_HEADER)}")
        out = []
        for rec in reader:
            row = {"config_id": rec["config_id"], "seed": int(rec["seed"])}
            for k in CSV_HEADER[2:]:
                row[k] = float(rec[k]) if rec[k] != "" else None
            out.append(row)
        return out
