from __future__ import annotations
from pathlib import Path
from typing import Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import ShapeMismatch


def _style_axes(ax, title: str, xlabel: str, ylabel: str):
    ax.set_title(title, fontsize=14, fontweight='bold', pad=20)
    ax.set_xlabel(xlabel, fontsize=12)
    ax.set_ylabel(ylabel, fontsize=12)
    ax.grid(True, alpha=0.3, linestyle="-", linewidth=0.5)
    ax.spines['top'].set_visible(False)
    ax.spines['right'].set_visible(False)
    ax.spines['left'].set_linewidth(0.5)
    ax.spines['bottom'].set_linewidth(0.5)


def plot_training_curve(log: pd.DataFrame, show: bool = False, save_path: Optional[str] = None):
    """Variational bound per epoch, with the noise precision on a twin axis."""
    plt.style.use('seaborn-v0_8-whitegrid')
    fig, ax = plt.subplots(figsize=(12, 6))
    ax.plot(log["epoch"], log["bound"], label="Lower bound", linewidth=2.5, color='#4169E1')
    _style_axes(ax, "Training bound", "Epoch", "Bound")
    if "gamma_mean" in log:
        ax2 = ax.twinx()
        ax2.plot(log["epoch"], log["gamma_mean"], label="<gamma>", linewidth=1.5,
                 color='#8B008B', alpha=0.7, linestyle="--")
        ax2.set_ylabel("<gamma>", fontsize=12)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], frameon=True, fancybox=True, shadow=True)
    else:
        ax.legend(frameon=True, fancybox=True, shadow=True)
    if save_path:
        fig.savefig(f"{save_path}_bound.png", bbox_inches="tight", dpi=150)
    if show:
        plt.show()
    plt.close(fig)
    return fig


def _as_image(row: np.ndarray, width: int, height: int) -> np.ndarray:
    if row.size != width * height:
        raise ShapeMismatch(f"{row.size} pixels do not form a {width}x{height} image")
    return row.reshape(height, width)


def save_images(rows: np.ndarray, width: int, height: int, out_dir: str | Path,
                vmin: float, vmax: float, ids: Optional[Sequence[int]] = None) -> list[Path]:
    """One grayscale PNG per row (``recon_<id>.png``); square images only."""
    if width != height:
        raise ShapeMismatch(f"image dumps need square images, got {width}x{height}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = list(range(len(rows))) if ids is None else list(ids)
    paths = []
    for i, row in zip(ids, rows):
        p = out_dir / f"recon_{int(i)}.png"
        plt.imsave(p, _as_image(np.asarray(row), width, height), cmap="gray", vmin=vmin, vmax=vmax)
        paths.append(p)
    return paths


def save_image_grid(truth: np.ndarray, pred: np.ndarray, width: int, height: int, save_path: str | Path,
                    vmin: float, vmax: float, max_rows: int = 10):
    """Side-by-side strip: ground truth on top, reconstruction below."""
    if width != height:
        raise ShapeMismatch(f"image grids need square images, got {width}x{height}")
    n = min(len(truth), len(pred), max_rows)
    if n == 0:
        return None
    fig, axes = plt.subplots(2, n, figsize=(1.6 * n, 3.4), squeeze=False)
    for j in range(n):
        for r, (src, label) in enumerate(((truth, "Presented"), (pred, "Reconstructed"))):
            ax = axes[r][j]
            ax.imshow(_as_image(np.asarray(src[j]), width, height), cmap="gray", vmin=vmin, vmax=vmax)
            ax.set_xticks([])
            ax.set_yticks([])
            if j == 0:
                ax.set_ylabel(label, fontsize=9)
    fig.tight_layout()
    fig.savefig(save_path, bbox_inches="tight", dpi=150)
    plt.close(fig)
    return fig
