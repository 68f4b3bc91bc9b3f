"""Figure rendering for report commands. File output only, no GUI."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_score_curve(rows: Sequence[Mapping], path: str | Path) -> None:
    """Line plot of per-iteration match score with the best-so-far overlay."""
    iterations = [r["iteration"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iterations, [r["match_score"] for r in rows], marker="o", label="match score")
    ax.plot(
        iterations,
        [r["best_so_far"] for r in rows],
        linestyle="--",
        label="best so far",
    )
    ax.set_xlabel("iteration")
    ax.set_ylabel("sentence match score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_metrics_bar(values: Mapping[str, float], path: str | Path) -> None:
    """Bar chart of a metric report."""
    names = list(values)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 4))
    ax.bar(names, [values[k] for k in names])
    ax.set_ylabel("value")
    for tick in ax.get_xticklabels():
        tick.set_rotation(30)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
