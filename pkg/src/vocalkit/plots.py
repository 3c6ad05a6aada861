"""Figure rendering: spectrogram PNGs for the review app, report figures."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm


def spectrogram_png_bytes(values: np.ndarray, top_db: float, upscale: int = 2) -> bytes:
    """Viridis-mapped PNG of a dB matrix, low bands at the bottom, frames
    upscaled 2x so narrow units stay legible in thumbnail grids."""
    norm = (np.asarray(values, dtype=np.float64) + top_db) / top_db
    norm = np.clip(norm, 0.0, 1.0)
    img = np.flipud(np.repeat(norm, max(1, upscale), axis=1))
    rgba = cm.viridis(img)
    buf = io.BytesIO()
    plt.imsave(buf, rgba, format="png")
    return buf.getvalue()


def save_partition_density_figure(
    densities: dict[str, tuple[np.ndarray, np.ndarray]], path: Path | str
) -> None:
    """Overlaid similarity-density curves, one per pair partition."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, (x, y) in densities.items():
        ax.plot(x, y, label=name.replace("_", " "))
        ax.fill_between(x, y, alpha=0.2)
    ax.set_xlabel("pairwise cosine similarity")
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_similarity_heatmap(values: np.ndarray, labels: list[str], path: Path | str) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(values, cmap="viridis", vmin=-1.0, vmax=1.0)
    fig.colorbar(im, ax=ax, label="cosine similarity")
    if len(labels) <= 40:
        ax.set_xticks(range(len(labels)))
        ax.set_yticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=90, fontsize=5)
        ax.set_yticklabels(labels, fontsize=5)
    else:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
