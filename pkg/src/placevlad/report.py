"""Evaluation report output: delimited tables and the figures rendered
alongside them."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .core import DataError
from .evaluation import EvalReport
from .io import atomic_write

REPORT_COLUMNS = ("threshold_m", "n", "recall", "precision", "mean_correct_at_n")
FIRST_HIT_COLUMNS = ("threshold_m", "query_id", "first_hit_rank")
MISS = "miss"


def write_report_table(reports: Sequence[EvalReport], path: Path | str) -> None:
    """One tab-separated row per (threshold, N) pair."""
    lines = ["\t".join(REPORT_COLUMNS)]
    for report in reports:
        for n in report.n_values:
            lines.append(
                "\t".join(
                    [
                        f"{report.threshold_m:g}",
                        str(n),
                        f"{report.recall_at[n]:.6f}",
                        f"{report.precision_at[n]:.6f}",
                        f"{report.mean_correct_at[n]:.6f}",
                    ]
                )
            )
    with atomic_write(path) as handle:
        handle.write(("\n".join(lines) + "\n").encode("utf-8"))


def write_first_hit_table(reports: Sequence[EvalReport], path: Path | str) -> None:
    """Per-query rank of the first correct result, one block per threshold."""
    lines = ["\t".join(FIRST_HIT_COLUMNS)]
    for report in reports:
        for query_id in sorted(report.first_hit_rank):
            rank = report.first_hit_rank[query_id]
            lines.append(f"{report.threshold_m:g}\t{query_id}\t{MISS if rank is None else rank}")
    with atomic_write(path) as handle:
        handle.write(("\n".join(lines) + "\n").encode("utf-8"))


def read_report_table(path: Path | str) -> list[dict]:
    """Parse a report table back into one dict per row."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or tuple(lines[0].split("\t")) != REPORT_COLUMNS:
        raise DataError(f"{path}: missing report header")
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(REPORT_COLUMNS):
            raise DataError(f"{path}:{line_no}: expected {len(REPORT_COLUMNS)} fields")
        try:
            rows.append(
                {
                    "threshold_m": float(parts[0]),
                    "n": int(parts[1]),
                    "recall": float(parts[2]),
                    "precision": float(parts[3]),
                    "mean_correct_at_n": float(parts[4]),
                }
            )
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: malformed numeric field") from exc
    return rows


def _curve_figure(reports, metric: str, ylabel: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for report in reports:
        values = getattr(report, metric)
        ax.plot(
            list(report.n_values),
            [values[n] for n in report.n_values],
            marker="o",
            label=f"D = {report.threshold_m:g} m",
        )
    ax.set_xlabel("N")
    ax.set_ylabel(ylabel)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _threshold_figure(reports, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    thresholds = [r.threshold_m for r in reports]
    for n in reports[0].n_values:
        ax.plot(thresholds, [r.recall_at[n] for r in reports], marker="o", label=f"recall@{n}")
    ax.set_xlabel("distance threshold (m)")
    ax.set_ylabel("recall")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_figures(reports: Sequence[EvalReport], out_dir: Path | str) -> list[Path]:
    """Render recall/precision curves (and a threshold sweep when several
    thresholds are present) as PNG files next to the tables."""
    if not reports:
        raise ValueError("no reports to render")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    recall_path = out_dir / "recall_vs_n.png"
    _curve_figure(reports, "recall_at", "recall", recall_path)
    written.append(recall_path)
    precision_path = out_dir / "precision_vs_n.png"
    _curve_figure(reports, "precision_at", "precision", precision_path)
    written.append(precision_path)
    if len(reports) > 1:
        sweep_path = out_dir / "recall_vs_threshold.png"
        _threshold_figure(reports, sweep_path)
        written.append(sweep_path)
    return written
