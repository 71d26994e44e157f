"""Render metric logs and ablation tables to CSV, plain text and PNG figures."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from artifact.model.network import TOGGLES
from artifact.pipeline.metrics import FIELDS, MetricLog, fmt

EPOCH_HEADER = ("run", "stage", "epoch") + FIELDS


def _cell(v) -> str:
    return "" if v is None else fmt(v)


def metrics_csv(logs: dict[str, MetricLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_HEADER)
    for run, log in logs.items():
        for r in log.records:
            w.writerow([run, r.stage, r.epoch] + [_cell(getattr(r, k)) for k in FIELDS])
    return buf.getvalue()


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:6.2f}"


def aggregate(rows: list[dict]) -> dict[str, dict]:
    """Mean of each summary column per config_id over successful seeds, in first-seen order."""
    out: dict[str, dict] = {}
    for row in rows:
        agg = out.setdefault(row["config_id"], {"seeds": 0, "failed": 0, "_vals": {}})
        if row["final_test_acc"] is None and row["final_train_acc"] is None:
            agg["failed"] += 1
            continue
        agg["seeds"] += 1
        for k in ("final_train_acc", "final_test_acc", "gap", "params_trainable", "otdd_final"):
            if row[k] is not None:
                agg["_vals"].setdefault(k, []).append(row[k])
    for agg in out.values():
        vals = agg.pop("_vals")
        for k in ("final_train_acc", "final_test_acc", "gap", "params_trainable", "otdd_final"):
            agg[k] = float(np.mean(vals[k])) if k in vals else None
    return out


def toggle_table(rows: list[dict]) -> str:
    """A0..A4 table: which components are on, plus mean accuracies and trainable count."""
    agg = aggregate(rows)
    mark = {True: "yes", False: "-"}
    lines = [f"{'model':<6} {'PAE':>4} {'SCE':>4} {'PVA':>4} {'train%':>7} {'test%':>7} {'gap%':>7} "
             f"{'trainable':>10} {'seeds':>5}"]
    for name, (pae, sce, pva) in TOGGLES.items():
        if name not in agg:
            continue
        a = agg[name]
        count = "-" if a["params_trainable"] is None else str(int(round(a["params_trainable"])))
        lines.append(f"{name:<6} {mark[pae]:>4} {mark[sce]:>4} {mark[pva]:>4} {_pct(a['final_train_acc']):>7} "
                     f"{_pct(a['final_test_acc']):>7} {_pct(a['gap']):>7} {count:>10} {a['seeds']:>5}")
    return "\n".join(lines) + "\n"


def cell_table(rows: list[dict]) -> str:
    agg = aggregate(rows)
    width = max([len("config")] + [len(k) for k in agg])
    lines = [f"{'config':<{width}} {'train%':>7} {'test%':>7} {'gap%':>7} {'otdd':>10} {'seeds':>5} {'failed':>6}"]
    for cid, a in agg.items():
        otdd = "-" if a["otdd_final"] is None else f"{a['otdd_final']:.4f}"
        lines.append(f"{cid:<{width}} {_pct(a['final_train_acc']):>7} {_pct(a['final_test_acc']):>7} "
                     f"{_pct(a['gap']):>7} {otdd:>10} {a['seeds']:>5} {a['failed']:>6}")
    return "\n".join(lines) + "\n"


def summary_text(logs: dict[str, MetricLog], rows: list[dict] | None = None) -> str:
    parts = []
    for run, log in logs.items():
        parts.append(f"run {run}: {len(log.stage(1))} stage-1 and {len(log.stage(2))} stage-2 epochs\n"
                     f"  final train acc   {_cell(log.final_train_acc) or '-'}\n"
                     f"  final test acc    {_cell(log.final_test_acc) or '-'}\n"
                     f"  train-test gap    {_cell(log.train_test_gap) or '-'}\n"
                     f"  final OTDD        {_cell(log.otdd_final) or '-'}\n")
    if rows:
        if any(r["config_id"] in TOGGLES for r in rows):
            parts.append("architecture toggles (mean over seeds)\n" + toggle_table(rows))
        parts.append("all cells (mean over seeds)\n" + cell_table(rows))
    return "\n".join(parts)


# figures ----------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_curves(logs: dict[str, MetricLog], path: Path) -> None:
    plt = _pyplot()
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for run, log in logs.items():
        recs = log.stage(2)
        if not recs:
            continue
        ep = [r.epoch for r in recs]
        ax_loss.plot(ep, [r.train_loss for r in recs], label=run)
        ax_acc.plot(ep, [r.train_acc for r in recs], label=f"{run} train")
        if any(r.test_acc is not None for r in recs):
            ax_acc.plot(ep, [np.nan if r.test_acc is None else r.test_acc for r in recs], "--",
                        label=f"{run} test")
    ax_loss.set(xlabel="stage-2 epoch", ylabel="cross-entropy", title="training loss")
    ax_acc.set(xlabel="stage-2 epoch", ylabel="accuracy", ylim=(0, 1.02), title="accuracy")
    for ax in (ax_loss, ax_acc):
        if ax.lines:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_otdd(logs: dict[str, MetricLog], path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for run, log in logs.items():
        traj = log.otdd_trajectory()
        if traj:
            ax.plot(range(len(traj)), traj, marker="o", label=run)
    ax.set(xlabel="stage-1 epoch", ylabel="OTDD estimate", title="modality gap during alignment")
    if ax.lines:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_gaps(labels: list[str], train: list[float], test: list[float], path: Path) -> None:
    plt = _pyplot()
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(5, 0.9 * len(labels) + 2), 4))
    ax.bar(x - 0.2, train, 0.4, label="train")
    ax.bar(x + 0.2, test, 0.4, label="test")
    for xi, tr, te in zip(x, train, test):
        ax.annotate(f"{100 * (tr - te):.1f}", (xi, max(tr, te)), ha="center", va="bottom", fontsize=7)
    ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=8)
    ax.set(ylabel="final accuracy", ylim=(0, 1.1), title="train-test gap (points)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render(logs: dict[str, MetricLog], out_dir: str | Path, rows: list[dict] | None = None) -> list[Path]:
    """Write metrics.csv, summary.txt and the figures; returns every path written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv", out / "summary.txt"]
    written[0].write_text(metrics_csv(logs))
    written[1].write_text(summary_text(logs, rows))
    if any(log.stage(2) for log in logs.values()):
        plot_curves(logs, out / "curves.png")
        written.append(out / "curves.png")
    if any(log.otdd_trajectory() for log in logs.values()):
        plot_otdd(logs, out / "otdd.png")
        written.append(out / "otdd.png")
    bars = []
    if rows:
        for cid, a in aggregate(rows).items():
            if a["final_train_acc"] is not None and a["final_test_acc"] is not None:
                bars.append((cid, a["final_train_acc"], a["final_test_acc"]))
    else:
        bars = [(run, log.final_train_acc, log.final_test_acc) for run, log in logs.items()
                if log.final_train_acc is not None and log.final_test_acc is not None]
    if bars:
        plot_gaps([b[0] for b in bars], [b[1] for b in bars], [b[2] for b in bars], out / "gap.png")
        written.append(out / "gap.png")
    return written
