"""Synthetic scenes with known burns, for desk-scale runs without Sentinel-2 data."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import BinaryMask, Polygon, RasterGrid, rasterize_polygons
from .ingest import BAND_ORDER, L1C_SCALE, CompositeRaster, scale_dn
from .raster_io import write_mask, write_raster

# NIR, green, SWIR background reflectance of dry-season savanna-like cover
BACKGROUND_MEAN = (0.30, 0.10, 0.20)
# burned pixels: NIR drops, SWIR rises -> dark red in NIR/G/SWIR false color
DEFAULT_SIGNATURE = (-0.2, 0.0, 0.3)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    size: int = 512
    n_burns: int = 5
    burn_signature: tuple = DEFAULT_SIGNATURE
    seed: int = 0
    noise_sigma: float = 0.05
    radius_range: tuple = (6.0, 40.0)  # in pixels
    sensing_date: dt.date = dt.date(2016, 8, 15)
    window_days: int = 90
    crs_id: str = "EPSG:32636"
    origin: tuple = (300000.0, 400000.0)
    pixel_size: float = 20.0
    scene_id: str | None = None

    def grid(self) -> RasterGrid:
        return RasterGrid.north_up(
            self.crs_id, self.origin[0], self.origin[1], self.pixel_size, self.size, self.size
        )


def _random_burn(rng, grid: RasterGrid, spec: SyntheticSceneSpec, fire_date) -> Polygon:
    """Star-shaped polygon around a random center, radius given in pixels."""
    cx = rng.uniform(0, spec.size)
    cy = rng.uniform(0, spec.size)
    radius = rng.uniform(*spec.radius_range)
    n = int(rng.integers(6, 13))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = radius * rng.uniform(0.6, 1.0, n)
    ox, oy = grid.origin
    px = spec.pixel_size
    ring = [
        (ox + (cx + r * np.cos(a)) * px, oy - (cy + r * np.sin(a)) * px)
        for a, r in zip(angles, radii)
    ]
    ring.append(ring[0])
    return Polygon(ring, (), {"fire_date": fire_date}, grid.crs_id)


def generate_synthetic_scene(spec: SyntheticSceneSpec):
    """Return ``(CompositeRaster, burn polygons)``; fully determined by ``spec.seed``.

    Reflectances are generated as integer digital numbers so a scene written to
    band files and re-composited reproduces the same channel values.
    """
    if spec.size < 128:
        raise ValueError(f"size must be >= 128, got {spec.size}")
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid()
    shape = (3, spec.size, spec.size)
    refl = np.asarray(BACKGROUND_MEAN)[:, None, None] + rng.normal(0, spec.noise_sigma, shape)

    polygons = []
    for _ in range(spec.n_burns):
        age = int(rng.integers(0, spec.window_days + 1))
        fire_date = spec.sensing_date - dt.timedelta(days=age)
        polygons.append(_random_burn(rng, grid, spec, fire_date))
    burned = rasterize_polygons(polygons, grid).data.astype(bool)
    refl[:, burned] += np.asarray(spec.burn_signature, dtype=float)[:, None]

    dn = np.clip(np.rint(refl * L1C_SCALE), 1, L1C_SCALE).astype(np.uint16)
    scene_id = spec.scene_id or f"SYN_{spec.sensing_date:%Y%m%d}T000000_s{spec.seed}"
    comp = CompositeRaster(
        grid=grid,
        channels=scale_dn(dn),
        sensing_date=spec.sensing_date,
        scene_id=scene_id,
        valid_mask=BinaryMask(grid, np.ones(grid.shape, dtype=np.uint8)),
    )
    return comp, polygons


def composite_to_dn(comp: CompositeRaster) -> np.ndarray:
    dn = np.rint(comp.channels.astype(np.float64) * L1C_SCALE).astype(np.uint16)
    dn[:, comp.valid_mask.data == 0] = 0
    return dn


def write_granule(comp: CompositeRaster, directory) -> dict:
    """Write the composite back out as L1C-style band files (B03 at 10 m)."""
    directory = Path(directory) / comp.scene_id
    dn = composite_to_dn(comp)
    fine = comp.grid.with_pixel_size(0.5)
    paths = {}
    for band, data in zip(BAND_ORDER, dn):
        grid = comp.grid
        if band == "B03":
            data = np.repeat(np.repeat(data, 2, axis=0), 2, axis=1)
            grid = fine
        paths[band] = write_raster(
            directory / f"{comp.scene_id}_{band}.tif", data, grid, nodata=0
        )
    return paths


def coarse_reference(mask: BinaryMask, factor: int = 25, min_fraction: float = 0.5) -> BinaryMask:
    """Degrade a fine mask to a coarse product (500 m from 20 m by default).

    A coarse cell is burned when at least ``min_fraction`` of its fine pixels
    are, mimicking the high detection threshold of a coarse BA product.
    """
    h, w = mask.grid.shape
    hh, ww = h // factor, w // factor
    blocks = mask.data[: hh * factor, : ww * factor].reshape(hh, factor, ww, factor)
    frac = blocks.mean(axis=(1, 3))
    coarse_grid = mask.grid.with_pixel_size(factor)
    coarse_grid = RasterGrid(coarse_grid.crs_id, coarse_grid.transform, ww, hh)
    return BinaryMask(coarse_grid, (frac >= min_fraction).astype(np.uint8))


def write_reference(mask: BinaryMask, path) -> Path:
    return write_mask(path, mask)
