"""Matplotlib figure rendering for the CLI report paths.

All figures are written to files (Agg backend); nothing interactive.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_mask_mosaic(stage_masks, path, keyframe_t=None):
    """Retention masks as a mosaic: one row per pruning stage, one column
    per temporal slice."""
    n_stages = len(stage_masks)
    n_slices = stage_masks[0][1].shape[0]
    fig, axes = plt.subplots(
        n_stages,
        n_slices,
        figsize=(1.2 * n_slices + 1, 1.2 * n_stages + 0.8),
        squeeze=False,
    )
    for i, (label, volume) in enumerate(stage_masks):
        for t in range(n_slices):
            ax = axes[i][t]
            ax.imshow(volume[t], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                title = f"t={t}" + (" (key)" if t == keyframe_t else "")
                ax.set_title(title, fontsize=8)
        axes[i][0].set_ylabel(label, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_flops_curves(rows, path):
    """GFLOPs versus keep rate, one line per resolution.

    ``rows`` holds (rho, resolution, total_gflops) tuples.
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    resolutions = sorted({r[1] for r in rows})
    for res in resolutions:
        pts = sorted((r[0], r[2]) for r in rows if r[1] == res)
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            label=f"{res} px",
        )
    ax.set_xlabel("keep rate")
    ax.set_ylabel("GFLOPs")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_curve(cells, path):
    """Median forward time versus keep rate.

    ``cells`` holds dicts with keys rho and median_seconds.
    """
    pts = sorted((c["rho"], c["median_seconds"] * 1e3) for c in cells)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
    ax.set_xlabel("keep rate")
    ax.set_ylabel("median forward time (ms)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_retention_curve(counts, path):
    """Token count after each encoder layer."""
    layers = np.arange(1, len(counts) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(layers, [c[1] for c in counts], where="post", marker=".")
    ax.set_xlabel("encoder layer")
    ax.set_ylabel("tokens after layer")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
