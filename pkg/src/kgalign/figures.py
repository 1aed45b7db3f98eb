"""Rendered figures accompanying the delimited reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import SweepRow
from .train import EpochLosses


def save_loss_figure(history: Sequence[EpochLosses], path: Union[str, Path]) -> None:
    """Plot the per-epoch loss terms next to the loss-history CSV."""
    epochs = [row.epoch for row in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [row.align for row in history], label="alignment")
    ax.plot(epochs, [row.rule_left for row in history], label="rules (left KG)")
    ax.plot(epochs, [row.rule_right for row in history], label="rules (right KG)")
    ax.plot(epochs, [row.total for row in history], label="total", color="black", linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(
    rows: Sequence[SweepRow],
    path: Union[str, Path],
    hits_levels: Sequence[int] = (1, 10),
) -> None:
    """Plot metrics against the training seed proportion next to the sweep CSV."""
    fractions = [row.fraction for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for n in hits_levels:
        ax.plot(fractions, [row.metrics.hits_at[n] for row in rows], marker="o", label=f"Hits@{n}")
    ax.plot(fractions, [row.metrics.mrr for row in rows], marker="s", label="MRR")
    ax.set_xlabel("seed alignment proportion used for training")
    ax.set_ylabel("metric value")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
