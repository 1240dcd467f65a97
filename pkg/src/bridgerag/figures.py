"""Figure rendering for evaluation reports.

Charts are written next to the JSON report files: an aggregate metric bar
chart per run, an EM-by-question-type breakdown when type labels exist,
and a metric-vs-k_b sweep chart when several budgets are evaluated.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport

_METRICS = ("em", "acc", "f1", "recall_at_k")
_METRIC_LABELS = {"em": "EM", "acc": "Acc", "f1": "F1", "recall_at_k": "Recall@k"}
_BAR_COLOR = "#4878a8"


def _annotate(ax, bars) -> None:
    for bar in bars:
        ax.annotate(
            f"{bar.get_height():.1f}",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center",
            va="bottom",
            fontsize=8,
        )


def plot_metric_summary(report: EvalReport, path: str | Path) -> Path:
    """Bar chart of the aggregate EM/Acc/F1/Recall percentages."""
    values = [report.aggregates[m] for m in _METRICS]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar([_METRIC_LABELS[m] for m in _METRICS], values, color=_BAR_COLOR)
    _annotate(ax, bars)
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.set_title(f"Aggregate metrics (n={report.aggregates['n_questions']})")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_type_breakdown(report: EvalReport, path: str | Path) -> Path:
    """Grouped EM/F1 bars per question type."""
    if not report.per_type:
        raise ValueError("report has no per-type aggregates")
    types = sorted(report.per_type)
    xs = range(len(types))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(5, 1.4 * len(types)), 3.4))
    em_bars = ax.bar(
        [x - width / 2 for x in xs],
        [report.per_type[t]["em"] for t in types],
        width,
        label="EM",
        color=_BAR_COLOR,
    )
    f1_bars = ax.bar(
        [x + width / 2 for x in xs],
        [report.per_type[t]["f1"] for t in types],
        width,
        label="F1",
        color="#a8c8e8",
    )
    _annotate(ax, em_bars)
    _annotate(ax, f1_bars)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(types, fontsize=9)
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.set_title("Metrics by question type")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_kb_sweep(
    reports_by_kb: Mapping[int, EvalReport],
    path: str | Path,
    metrics: Sequence[str] = ("em", "f1", "recall_at_k"),
) -> Path:
    """Metric curves over the bridging-fact budget k_b."""
    if not reports_by_kb:
        raise ValueError("no reports to sweep")
    kbs = sorted(reports_by_kb)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for metric in metrics:
        ax.plot(
            kbs,
            [reports_by_kb[kb].aggregates[metric] for kb in kbs],
            marker="o",
            label=_METRIC_LABELS.get(metric, metric),
        )
    ax.set_xlabel("bridging budget k_b")
    ax.set_ylabel("%")
    ax.set_xticks(kbs)
    ax.set_title("Effect of the bridging-fact budget")
    ax.legend(fontsize=8)
    ax.grid(True, linewidth=0.3, alpha=0.5)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
