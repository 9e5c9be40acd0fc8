"""Matplotlib figures written by the report and detect commands.

All figures use the Agg backend and strip the PNG ``Software`` tag so that
identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap, Normalize  # noqa: E402

from .anomaly import OVERLAY_MAX, OVERLAY_RAMP  # noqa: E402

PNG_METADATA = {"Software": None}
STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

overlay_cmap = LinearSegmentedColormap.from_list("overlay", OVERLAY_RAMP / 255.0)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def save_deviation_histogram(stats, path, highlight: Sequence = ()) -> Path:
    """Bar histogram of per-image deviations, red lines at the highlighted scenes."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        edges = stats.bin_edges
        ax.bar(edges[:-1], stats.counts, width=stats.bin_width, align="edge", color="0.55", edgecolor="0.2")
        lookup = dict(stats.per_image)
        for scene in highlight:
            if scene in lookup:
                ax.axvline(lookup[scene], color="red", lw=1.5)
        ax.set_xlabel("mean absolute pixel deviation (°C)")
        ax.set_ylabel("images")
        ax.set_xlim(0, max(edges[-1], 1.0))
        fig.tight_layout()
        return _save(fig, path)


def save_overlay_figure(rgb, overlay, amap, mask, path, title: str = "") -> Path:
    """RGB, signed deviation map and tinted overlay side by side, with colour bars."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.6))
        axes[0].imshow(rgb)
        axes[0].set_title("RGB")
        values = np.where(amap.valid, amap.values, np.nan)
        im = axes[1].imshow(values, cmap="RdBu_r", vmin=-5, vmax=5)
        axes[1].set_title("deviation E (°C)")
        fig.colorbar(im, ax=axes[1], fraction=0.046, pad=0.04)
        axes[2].imshow(overlay)
        axes[2].set_title(f"flagged, T = {mask.tolerance_used:g} °C")
        sm = matplotlib.cm.ScalarMappable(norm=Normalize(0, OVERLAY_MAX), cmap=overlay_cmap)
        fig.colorbar(sm, ax=axes[2], fraction=0.046, pad=0.04, label="|E| (°C)")
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def save_training_curves(history: Sequence[dict], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        epochs = [h["epoch"] for h in history]
        ax.plot(epochs, [h["loss_g_l1"] for h in history], label="train L1")
        if history and "val_l1" in history[0]:
            ax.plot(epochs, [h["val_l1"] for h in history], label="validation L1")
        ax.set_xlabel("epoch")
        ax.set_ylabel("L1 (model units)")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
