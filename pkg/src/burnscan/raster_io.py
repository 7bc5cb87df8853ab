"""Thin GeoTIFF/JPEG2000 read-write layer over rasterio."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import rasterio
from rasterio.errors import RasterioIOError

from .errors import ReadFailure
from .geo import BinaryMask, RasterGrid, normalize_crs

MASK_NODATA = 255

# fixed creation options keep repeated writes byte-identical
_GTIFF_OPTS = {"compress": "deflate", "tiled": False}


def read_raster(path):
    """Return ``(data[bands, h, w], grid, nodata, tags)``."""
    path = Path(path)
    if not path.exists():
        raise ReadFailure(path, "file does not exist")
    try:
        with rasterio.open(path) as src:
            data = src.read()
            crs = src.crs.to_string() if src.crs else None
            grid = RasterGrid.from_affine(normalize_crs(crs), src.transform, src.width, src.height)
            return data, grid, src.nodata, src.tags()
    except RasterioIOError as exc:
        raise ReadFailure(path, str(exc)) from exc


def write_raster(path, data, grid: RasterGrid, nodata=None, tags=None) -> Path:
    path = Path(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[None]
    if data.shape[1:] != grid.shape:
        raise ValueError(f"array shape {data.shape[1:]} does not match grid {grid.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    profile = dict(
        driver="GTiff",
        width=grid.width,
        height=grid.height,
        count=data.shape[0],
        dtype=data.dtype.name,
        crs=grid.crs_id,
        transform=grid.to_affine(),
        nodata=nodata,
        **_GTIFF_OPTS,
    )
    with rasterio.open(path, "w", **profile) as dst:
        dst.write(data)
        if tags:
            dst.update_tags(**{k: str(v) for k, v in tags.items()})
    return path


def write_mask(path, mask: BinaryMask, valid=None, tags=None) -> Path:
    """Single-band uint8 GeoTIFF, values {0, 1}, nodata 255 where ``valid`` is 0."""
    data = mask.data.copy()
    if valid is not None:
        data[~np.asarray(valid, dtype=bool)] = MASK_NODATA
    return write_raster(path, data, mask.grid, nodata=MASK_NODATA, tags=tags)


def read_mask(path):
    """Return ``(BinaryMask, valid)`` where ``valid`` marks non-nodata pixels."""
    data, grid, nodata, _ = read_raster(path)
    band = data[0]
    valid = band != (MASK_NODATA if nodata is None else nodata)
    values = np.where(valid, band, 0)
    if not np.isin(values, (0, 1)).all():
        raise ReadFailure(path, "mask contains values other than 0, 1 and nodata")
    return BinaryMask(grid, values.astype(np.uint8)), valid
