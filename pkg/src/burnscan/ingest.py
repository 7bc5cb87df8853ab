"""Sentinel-2 L1C scene catalogue and false-color compositing.

Composites stack [B8A, B03, B12] (NIR, green, SWIR) on the 20 m grid of B8A.
Digital numbers are divided by 10000 and clipped to [0, 1] per scene, so no
dataset-level statistics are needed at inference time.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import rasterio

from .errors import (
    EmptyCatalog,
    GridMismatch,
    IncompleteSceneWarning,
    OddDimensions,
    ReadFailure,
    WrongBand,
)
from .geo import BinaryMask, Polygon, RasterGrid
from .raster_io import read_raster, write_raster

log = logging.getLogger(__name__)

BAND_ORDER = ("B8A", "B03", "B12")
NATIVE_RESOLUTION = {"B8A": 20.0, "B03": 10.0, "B12": 20.0}
L1C_SCALE = 10000
L1C_NODATA = 0
MISSION_START = dt.date(2015, 1, 1)

_BAND_RE = re.compile(r"(?:^|[_\-.])(B8A|B03|B12)(?:[_\-.]|$)", re.IGNORECASE)
_RASTER_SUFFIXES = {".jp2", ".tif", ".tiff"}
_DATE_RES = (
    re.compile(r"(?<!\d)(\d{8})T\d{6}"),
    re.compile(r"(?<!\d)(\d{4}-\d{2}-\d{2})(?!\d)"),
    re.compile(r"(?<!\d)(20\d{6})(?!\d)"),
)


@dataclass(frozen=True)
class SceneRef:
    scene_id: str
    sensing_date: dt.date
    band_paths: dict
    crs_id: str | None
    footprint: Polygon


@dataclass(frozen=True)
class BandRaster:
    grid: RasterGrid
    band_id: str
    data: np.ndarray
    nodata_value: int

    @property
    def valid(self) -> np.ndarray:
        return self.data != self.nodata_value


@dataclass(frozen=True)
class CompositeRaster:
    grid: RasterGrid
    channels: np.ndarray
    sensing_date: dt.date
    scene_id: str
    valid_mask: BinaryMask

    def __post_init__(self):
        if self.channels.shape != (3,) + self.grid.shape:
            raise ValueError(
                f"channels shape {self.channels.shape} does not match 3 x {self.grid.shape}"
            )


def _parse_date(text: str) -> dt.date | None:
    for pattern in _DATE_RES:
        m = pattern.search(text)
        if not m:
            continue
        raw = m.group(1)
        try:
            if "-" in raw:
                return dt.date.fromisoformat(raw)
            return dt.datetime.strptime(raw, "%Y%m%d").date()
        except ValueError:
            continue
    return None


def _band_files(directory: Path) -> dict:
    found: dict = {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in _RASTER_SUFFIXES:
            continue
        m = _BAND_RE.search(path.stem)
        if m:
            found.setdefault(m.group(1).upper(), path)
    return found


def _skip(directory, reason):
    warnings.warn(f"skipping {directory}: {reason}", IncompleteSceneWarning, stacklevel=3)


def _scene_from_dir(directory: Path, bands: dict, min_date: dt.date) -> SceneRef | None:
    missing = [b for b in BAND_ORDER if b not in bands]
    if missing:
        _skip(directory, f"missing band(s) {', '.join(missing)}")
        return None
    date = _parse_date(directory.name)
    if date is None:
        date = next(filter(None, (_parse_date(p.name) for p in bands.values())), None)
    if date is None:
        _skip(directory, "no sensing date in directory or file names")
        return None
    if date < min_date:
        _skip(directory, f"sensing date {date} precedes {min_date}")
        return None
    grids = {}
    for band in BAND_ORDER:
        try:
            with rasterio.open(bands[band]) as src:
                grids[band] = RasterGrid.from_affine(
                    src.crs.to_string() if src.crs else None, src.transform, src.width, src.height
                )
        except Exception as exc:  # rasterio raises several unrelated types
            _skip(directory, f"{bands[band]} is unreadable ({exc})")
            return None
    grid = grids["B8A"]
    return SceneRef(
        scene_id=directory.name,
        sensing_date=date,
        band_paths={b: bands[b] for b in BAND_ORDER},
        crs_id=grid.crs_id,
        footprint=Polygon.from_grid(grid, {"scene_id": directory.name}),
    )


def build_catalog(root, min_date: dt.date = MISSION_START) -> list[SceneRef]:
    """One :class:`SceneRef` per granule directory under ``root`` holding all three bands.

    Incomplete or unreadable granules are skipped with an
    :class:`~burnscan.errors.IncompleteSceneWarning`.
    """
    root = Path(root)
    if not root.is_dir():
        raise ReadFailure(root, "not a directory")
    scenes = []
    for directory in sorted([root, *(p for p in root.rglob("*") if p.is_dir())]):
        bands = _band_files(directory)
        if not bands:
            continue
        scene = _scene_from_dir(directory, bands, min_date)
        if scene is not None:
            scenes.append(scene)
    if not scenes:
        raise EmptyCatalog(f"no complete Sentinel-2 granules under {root}")
    scenes.sort(key=lambda s: (s.sensing_date, s.scene_id))
    return scenes


def load_band(scene: SceneRef, band_id: str) -> BandRaster:
    band_id = band_id.upper()
    if band_id not in scene.band_paths:
        raise WrongBand(f"scene {scene.scene_id} has no band {band_id}")
    path = scene.band_paths[band_id]
    data, grid, nodata, _ = read_raster(path)
    if data.shape[0] != 1:
        raise ReadFailure(path, f"expected a single band, found {data.shape[0]}")
    data = data[0]
    if np.issubdtype(data.dtype, np.floating) or (data < 0).any():
        raise ReadFailure(path, "digital numbers must be non-negative integers")
    expected = NATIVE_RESOLUTION[band_id]
    if not (abs(grid.pixel_width) == expected and abs(grid.pixel_height) == expected):
        raise GridMismatch(
            f"{path}: {band_id} should be {expected:g} m, got {abs(grid.pixel_width):g} m"
        )
    return BandRaster(grid, band_id, data, int(L1C_NODATA if nodata is None else nodata))


def resample_b03_to_20m(band: BandRaster) -> BandRaster:
    """2x2 block mean of valid pixels, rounded half up; all-nodata blocks stay nodata."""
    if band.band_id != "B03":
        raise WrongBand(f"only B03 is resampled, got {band.band_id}")
    h, w = band.data.shape
    if h % 2 or w % 2:
        raise OddDimensions(f"B03 raster is {h}x{w}; both dimensions must be even")
    data = band.data.astype(np.int64).reshape(h // 2, 2, w // 2, 2)
    valid = band.valid.reshape(h // 2, 2, w // 2, 2)
    total = np.where(valid, data, 0).sum(axis=(1, 3))
    count = valid.sum(axis=(1, 3))
    safe = np.maximum(count, 1)
    # integer round-half-up of total / count
    mean = (2 * total + safe) // (2 * safe)
    out = np.where(count > 0, mean, band.nodata_value).astype(band.data.dtype)
    return BandRaster(band.grid.with_pixel_size(2), "B03", out, band.nodata_value)


def scale_dn(data: np.ndarray) -> np.ndarray:
    return np.clip(data.astype(np.float32) / np.float32(L1C_SCALE), 0.0, 1.0)


def composite(scene: SceneRef) -> CompositeRaster:
    nir = load_band(scene, "B8A")
    swir = load_band(scene, "B12")
    if nir.grid != swir.grid:
        raise GridMismatch(f"{scene.scene_id}: B8A and B12 grids differ")
    green = resample_b03_to_20m(load_band(scene, "B03"))
    if green.grid != nir.grid:
        raise GridMismatch(f"{scene.scene_id}: resampled B03 does not align with B8A")
    bands = (nir, green, swir)
    valid = np.logical_and.reduce([b.valid for b in bands])
    channels = np.stack([scale_dn(b.data) for b in bands])
    channels[:, ~valid] = 0.0
    return CompositeRaster(
        grid=nir.grid,
        channels=channels,
        sensing_date=scene.sensing_date,
        scene_id=scene.scene_id,
        valid_mask=BinaryMask(nir.grid, valid.astype(np.uint8)),
    )


def save_composite(comp: CompositeRaster, directory) -> Path:
    """Write ``<scene_id>.tif`` (float32, NaN nodata) and a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = comp.channels.astype(np.float32).copy()
    data[:, comp.valid_mask.data == 0] = np.nan
    path = write_raster(
        directory / f"{comp.scene_id}.tif",
        data,
        comp.grid,
        nodata=float("nan"),
        tags={"scene_id": comp.scene_id, "sensing_date": comp.sensing_date.isoformat()},
    )
    sidecar = {
        "scene_id": comp.scene_id,
        "sensing_date": comp.sensing_date.isoformat(),
        "band_order": list(BAND_ORDER),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return path


def load_composite(path) -> CompositeRaster:
    path = Path(path)
    data, grid, _, tags = read_raster(path)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    else:
        meta = tags
    if list(meta.get("band_order", BAND_ORDER)) != list(BAND_ORDER):
        raise ReadFailure(path, f"unexpected band order {meta.get('band_order')}")
    if data.shape[0] != 3:
        raise ReadFailure(path, f"composite must have 3 bands, found {data.shape[0]}")
    valid = np.isfinite(data).all(axis=0)
    channels = np.where(valid, data, 0).astype(np.float32)
    return CompositeRaster(
        grid=grid,
        channels=channels,
        sensing_date=dt.date.fromisoformat(meta["sensing_date"]),
        scene_id=meta.get("scene_id", path.stem),
        valid_mask=BinaryMask(grid, valid.astype(np.uint8)),
    )


def load_composites(directory) -> list[CompositeRaster]:
    paths = sorted(Path(directory).glob("*.tif"))
    if not paths:
        raise ReadFailure(directory, "no composite GeoTIFFs found")
    comps = [load_composite(p) for p in paths]
    comps.sort(key=lambda c: (c.sensing_date, c.scene_id))
    return comps
