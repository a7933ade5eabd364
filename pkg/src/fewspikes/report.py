"""Figure rendering for the CLI report paths (PNG next to the data files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_training_curves", "save_energy_chart", "save_channel_panel"]


def save_training_curves(log, path) -> None:
    """Loss, metric, and firing rate over epochs."""
    epochs = [r.epoch for r in log]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(epochs, [r.loss for r in log], marker=".")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[1].plot(epochs, [r.metric for r in log], marker=".", color="tab:green")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("metric")
    axes[2].plot(epochs, [r.firing_rate for r in log], marker=".", color="tab:red")
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("firing rate")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_energy_chart(results: list[dict], path) -> None:
    """Computed vs expected millijoules per row, log scale."""
    names = [r["name"] for r in results]
    computed = [r["computed_mj"] for r in results]
    expected = [r.get("expected_mj") for r in results]
    y = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(8, max(3, 0.35 * len(names) + 1)))
    ax.barh(y - 0.18, computed, height=0.36, label="computed")
    if any(e is not None for e in expected):
        ax.barh(y + 0.18, [e if e is not None else 0 for e in expected],
                height=0.36, label="expected")
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xscale("log")
    ax.set_xlabel("energy per inference (mJ)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_channel_panel(frame, path) -> None:
    """The three encoder channels side by side."""
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    for ax, (img, title) in zip(axes, [(frame.st, "continuity (ST)"),
                                       (frame.s, "spatial (S)"),
                                       (frame.t, "temporal (T)")]):
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
