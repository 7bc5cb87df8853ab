"""Static triptychs: false-color input, reference mask, model mask."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geo import BinaryMask, RasterGrid  # noqa: E402


def _extent(grid: RasterGrid):
    minx, miny, maxx, maxy = grid.bounds
    return (minx, maxx, miny, maxy)


def false_color(channels: np.ndarray, low=2, high=98) -> np.ndarray:
    """RGB image with SWIR in red and NIR in green, so fresh burns show dark red.

    ``channels`` is ordered [B8A, B03, B12]; each band gets a percentile stretch.
    """
    rgb = np.stack([channels[2], channels[0], channels[1]], axis=-1).astype(float)
    out = np.empty_like(rgb)
    for i in range(3):
        band = rgb[..., i]
        lo, hi = np.percentile(band, [low, high])
        out[..., i] = np.clip((band - lo) / (hi - lo if hi > lo else 1.0), 0, 1)
    return out


def triptych(
    channels,
    grid: RasterGrid,
    reference: BinaryMask | None,
    prediction: BinaryMask | None,
    path,
    titles=("NIR / Green / SWIR false color", "reference", "model output"),
    suptitle=None,
) -> Path:
    path = Path(path)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4.2))
    axes[0].imshow(false_color(channels), extent=_extent(grid))
    for ax, mask in zip(axes[1:], (reference, prediction)):
        if mask is None:
            ax.text(0.5, 0.5, "n/a", ha="center", va="center", transform=ax.transAxes)
        else:
            ax.imshow(mask.data, cmap="gray", vmin=0, vmax=1, extent=_extent(mask.grid),
                      interpolation="nearest")
            ax.set_xlim(axes[0].get_xlim())
            ax.set_ylim(axes[0].get_ylim())
    for ax, title in zip(axes, titles):
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    if suptitle:
        fig.suptitle(suptitle)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
