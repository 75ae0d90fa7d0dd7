"""Figures written next to the delimited results."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_TAG_COLUMNS = (("audio", "audio"), ("visual", "visual"), ("audio-visual", "av"), ("overall", "overall"))


def _nan(x):
    return np.nan if x is None else x


def plot_ablation(rows, path: str | Path) -> Path:
    """Grouped bars: one group per ablation row, one bar per question type."""
    names = [name for name, _ in rows]
    x = np.arange(len(names))
    width = 0.8 / len(_TAG_COLUMNS)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(names) + 2), 3.6), constrained_layout=True)
    for i, (key, label) in enumerate(_TAG_COLUMNS):
        vals = [_nan(r.accuracy[key]) for _, r in rows]
        ax.bar(x + (i - (len(_TAG_COLUMNS) - 1) / 2) * width, vals, width, label=label)
    ax.set_xticks(x, names, rotation=45, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("validation accuracy")
    ax.legend(ncols=4, fontsize="small", loc="lower right")
    ax.grid(axis="y", alpha=0.3)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_losses(rows, path: str | Path) -> Path:
    """Per-epoch mean training loss for each run."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6), constrained_layout=True)
    for name, r in rows:
        ax.plot(np.arange(1, len(r.epoch_losses) + 1), r.epoch_losses, label=name, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax.set_yscale("log")
    if len(rows) > 1:
        ax.legend(fontsize="x-small", ncols=2)
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
