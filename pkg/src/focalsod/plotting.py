"""Report figures written next to the text/JSON outputs (headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def training_curves(losses: Sequence[float], lrs: Sequence[float], path) -> Path:
    """Per-iteration loss (log scale) above the learning-rate trace."""
    fig, (ax_l, ax_r) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    it = np.arange(len(losses))
    ax_l.plot(it, losses, lw=0.8, color="tab:blue")
    if len(losses) >= 10:
        k = max(2, len(losses) // 20)
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax_l.plot(it[k - 1:], smooth, lw=1.6, color="tab:orange", label=f"{k}-iter mean")
        ax_l.legend(loc="upper right")
    ax_l.set_yscale("log")
    ax_l.set_ylabel("total loss")
    ax_r.step(it, lrs, where="post", color="tab:green")
    ax_r.set_ylabel("learning rate")
    ax_r.set_xlabel("iteration")
    return _save(fig, path)


def metric_bars(rows: dict, path, title: str = "") -> Path:
    """Grouped bars, one group per run; ``rows`` maps run name to a metric dict."""
    names = list(rows)
    metrics = list(next(iter(rows.values()))) if rows else []
    fig, ax = plt.subplots(figsize=(max(4.5, 1.2 * len(names) + 2), 4.0))
    width = 0.8 / max(1, len(metrics))
    x = np.arange(len(names))
    for j, m in enumerate(metrics):
        ax.bar(x + j * width - 0.4 + width / 2, [rows[n][m] for n in names], width, label=m)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncol=len(metrics), loc="upper center", bbox_to_anchor=(0.5, -0.12), frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def saliency_panel(images: Sequence[np.ndarray], titles: Sequence[str], path) -> Path:
    """Side-by-side grayscale maps, e.g. prediction and ground truth."""
    fig, axes = plt.subplots(1, len(images), figsize=(2.4 * len(images), 2.6))
    for ax, img, t in zip(np.atleast_1d(axes), images, titles):
        ax.imshow(np.squeeze(img), cmap="gray", vmin=0, vmax=1)
        ax.set_title(t, fontsize=9)
        ax.axis("off")
    return _save(fig, path)
