"""Rendering of evaluation results: aligned text tables, CSV, and figures."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import R2R, R2W, W2R, W2W, EvalResult

_COLUMNS = ("ACC-First", "ACC", "Confidence", "EvalACC", "R2R", "R2W", "W2W", "W2R", "N", "Unparsed")


def render_metrics_table(rows: Sequence[tuple[str, EvalResult]]) -> str:
    """Aligned plain-text table, one row per labeled result.

    Percentages print to one decimal place; ACC carries its delta over the
    initial accuracy, e.g. "29.0 (+3.8)".
    """
    label_width = max([len("Run")] + [len(label) for label, _ in rows])
    header = f"{'Run':<{label_width}}  " + "  ".join(f"{c:>11}" for c in _COLUMNS)
    lines = [header, "-" * len(header)]
    for label, r in rows:
        delta = r.acc - r.acc_first
        cells = [
            f"{r.acc_first:.1f}",
            f"{r.acc:.1f} ({delta:+.1f})",
            f"{r.confidence:.1f}",
            f"{r.eval_acc:.1f}",
            str(r.transitions[R2R]),
            str(r.transitions[R2W]),
            str(r.transitions[W2W]),
            str(r.transitions[W2R]),
            str(r.n),
            str(r.unparseable),
        ]
        lines.append(f"{label:<{label_width}}  " + "  ".join(f"{c:>11}" for c in cells))
    return "\n".join(lines) + "\n"


def write_metrics_csv(rows: Sequence[tuple[str, EvalResult]], path: str | Path) -> None:
    """Delimited output with full-precision values."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["run", "n", "acc_first", "acc", "confidence", "eval_acc",
             "r2r", "r2w", "w2w", "w2r", "unparseable"]
        )
        for label, r in rows:
            writer.writerow(
                [label, r.n, repr(r.acc_first), repr(r.acc), repr(r.confidence), repr(r.eval_acc),
                 r.transitions[R2R], r.transitions[R2W], r.transitions[W2W], r.transitions[W2R],
                 r.unparseable]
            )


def plot_accuracy(rows: Sequence[tuple[str, EvalResult]], path: str | Path) -> None:
    """Grouped bars: initial vs corrected accuracy per run."""
    labels = [label for label, _ in rows]
    first = [r.acc_first for _, r in rows]
    final = [r.acc for _, r in rows]
    x = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(labels)), 4.0))
    ax.bar([i - width / 2 for i in x], first, width, label="initial")
    ax.bar([i + width / 2 for i in x], final, width, label="after correction")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_transitions(rows: Sequence[tuple[str, EvalResult]], path: str | Path) -> None:
    """Stacked bars of the four answer-transition cells per run."""
    labels = [label for label, _ in rows]
    keys = (W2R, R2R, W2W, R2W)
    bottoms = [0.0] * len(rows)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(labels)), 4.0))
    for key in keys:
        values = [r.transitions[key] for _, r in rows]
        ax.bar(labels, values, bottom=bottoms, label=key)
        bottoms = [b + v for b, v in zip(bottoms, values)]
    ax.set_ylabel("modified answers")
    ax.legend()
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_accuracy_by_round(
    series: Mapping[str, Sequence[float]], path: str | Path
) -> None:
    """Accuracy after each correction round, one line per run."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in series.items():
        rounds = list(range(1, len(values) + 1))
        ax.plot(rounds, values, marker="o", label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("accuracy (%)")
    ax.xaxis.get_major_locator().set_params(integer=True)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_curve(curve: Sequence[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(range(len(curve)), curve)
    ax.set_xlabel("step")
    ax.set_ylabel("masked loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
