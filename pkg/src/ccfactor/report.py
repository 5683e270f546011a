"""Summaries of a finished run directory: per-epoch CSV and SVG loss plots."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .autodiff import ValidationError
from .model import LOSS_NAMES
from .train import read_trace


def epoch_means(trace: list[dict]) -> list[dict]:
    """Average every loss column over the steps of each epoch."""
    by_epoch: dict[int, list[dict]] = {}
    for row in trace:
        by_epoch.setdefault(int(row["epoch"]), []).append(row)
    out = []
    for epoch in sorted(by_epoch):
        rows = by_epoch[epoch]
        out.append({"epoch": epoch, "steps": len(rows), **{k: float(np.mean([r[k] for r in rows])) for k in LOSS_NAMES}})
    return out


def write_epoch_csv(rows: list[dict], path: Path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["epoch", "steps", *LOSS_NAMES], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    path.write_text(buf.getvalue())


def plot_trace(trace: list[dict], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r["step"] for r in trace]
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for k in ("L_asr", "L_contrast", "L_total"):
        axes[0].plot(steps, [r[k] for r in trace], label=k, linewidth=0.8)
    for k in ("L_m_content", "L_m_context", "L_m_joint"):
        axes[1].plot(steps, [r[k] for r in trace], label=k, linewidth=0.8)
    axes[0].set_yscale("log")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("step")
    for ax in axes:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def build_report(run_dir: str | Path, svg: bool = True) -> dict[str, Path]:
    """Write ``epochs.csv`` (and ``losses.svg``) next to the run's ``trace.csv``."""
    run_dir = Path(run_dir)
    trace_path = run_dir / "trace.csv"
    if not trace_path.exists():
        raise ValidationError(f"{run_dir} has no trace.csv")
    trace = read_trace(trace_path)
    if not trace:
        raise ValidationError(f"{trace_path} is empty")
    outputs = {"epochs": run_dir / "epochs.csv"}
    write_epoch_csv(epoch_means(trace), outputs["epochs"])
    if svg:
        outputs["svg"] = run_dir / "losses.svg"
        plot_trace(trace, outputs["svg"])
    report = run_dir / "report.json"
    if report.exists():
        outputs["summary"] = run_dir / "summary.json"
        data = json.loads(report.read_text())
        data["final_epoch"] = epoch_means(trace)[-1]
        outputs["summary"].write_text(json.dumps(data, indent=2) + "\n")
    return outputs
