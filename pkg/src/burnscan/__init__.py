"""Burned-area mapping: Sentinel-2 compositing, patch datasets, segmentation and transfer."""

__version__ = "0.1.0"

from .geo import (  # noqa: E402
    BinaryMask,
    Polygon,
    RasterGrid,
    pixel_to_world,
    rasterize_polygons,
    world_to_pixel,
    zonal_fraction,
)
from .metrics import aggregate, dice, evaluate, iou  # noqa: E402

__all__ = [
    "BinaryMask",
    "Polygon",
    "RasterGrid",
    "aggregate",
    "dice",
    "evaluate",
    "iou",
    "pixel_to_world",
    "rasterize_polygons",
    "world_to_pixel",
    "zonal_fraction",
]
