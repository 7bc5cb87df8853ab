"""Georeferenced grids, polygons, rasterization and zonal statistics.

Pixels follow a half-open convention: pixel (r, c) of a north-up grid covers
``[x0 + c*w, x0 + (c+1)*w) x (y0 - (r+1)*h, y0 - r*h]``, so every world point
maps to exactly one pixel. Polygon membership is decided at pixel centers, which
makes rasterized labels a +/- half-pixel approximation of the true boundary.
"""
from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CRSMismatch,
    PolygonError,
    ReadFailure,
    RotatedGridUnsupported,
    ShapeError,
    ZeroZoneWarning,
)


def normalize_crs(crs) -> str | None:
    """Return ``"EPSG:nnnn"`` for anything that names an EPSG code."""
    if crs is None:
        return None
    if isinstance(crs, int):
        return f"EPSG:{crs}"
    text = str(crs).strip()
    upper = text.upper()
    if upper.startswith("URN:OGC:DEF:CRS:EPSG:"):
        return "EPSG:" + upper.rsplit(":", 1)[-1]
    if upper.startswith("EPSG:"):
        return "EPSG:" + upper.split(":", 1)[1]
    if upper.isdigit():
        return f"EPSG:{upper}"
    return text


@dataclass(frozen=True)
class RasterGrid:
    """Pixel grid with a GDAL-ordered affine geotransform.

    ``transform`` is ``(origin_x, pixel_width, row_rotation, origin_y,
    col_rotation, pixel_height)``; ``pixel_height`` is negative for north-up.
    """

    crs_id: str | None
    transform: tuple
    width: int
    height: int

    def __post_init__(self):
        t = tuple(float(v) for v in self.transform)
        if len(t) != 6:
            raise ValueError("transform must have 6 coefficients")
        object.__setattr__(self, "transform", t)
        object.__setattr__(self, "crs_id", normalize_crs(self.crs_id))
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"grid must be non-empty, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if t[1] == 0 or t[5] == 0:
            raise ValueError("pixel width and height must be non-zero")

    @classmethod
    def north_up(cls, crs_id, origin_x, origin_y, pixel_size, width, height):
        return cls(crs_id, (origin_x, pixel_size, 0.0, origin_y, 0.0, -pixel_size), width, height)

    @property
    def origin(self):
        return self.transform[0], self.transform[3]

    @property
    def pixel_width(self) -> float:
        return self.transform[1]

    @property
    def pixel_height(self) -> float:
        return self.transform[5]

    @property
    def shape(self):
        return self.height, self.width

    @property
    def is_rotated(self) -> bool:
        return self.transform[2] != 0 or self.transform[4] != 0

    @property
    def pixel_area_km2(self) -> float:
        return abs(self.pixel_width * self.pixel_height) / 1e6

    @property
    def bounds(self):
        """(minx, miny, maxx, maxy) of the full extent."""
        _require_north_up(self)
        x0, y0 = self.origin
        x1 = x0 + self.width * self.pixel_width
        y1 = y0 + self.height * self.pixel_height
        return min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)

    def window(self, row_off: int, col_off: int, height: int, width: int) -> "RasterGrid":
        """Sub-grid whose pixel (0, 0) is this grid's (row_off, col_off)."""
        ox, pw, rr, oy, cr, ph = self.transform
        x = ox + col_off * pw + row_off * rr
        y = oy + col_off * cr + row_off * ph
        return RasterGrid(self.crs_id, (x, pw, rr, y, cr, ph), width, height)

    def with_pixel_size(self, factor: float) -> "RasterGrid":
        """Same origin, pixels scaled by ``factor``, dimensions divided by it."""
        ox, pw, rr, oy, cr, ph = self.transform
        return RasterGrid(
            self.crs_id,
            (ox, pw * factor, rr, oy, cr, ph * factor),
            int(self.width / factor),
            int(self.height / factor),
        )

    def offset_in(self, other: "RasterGrid") -> tuple[int, int]:
        """Integer (row, col) of this grid's origin inside ``other``.

        Both grids must share CRS and pixel size and lie on the same lattice.
        """
        if self.crs_id != other.crs_id:
            raise CRSMismatch(f"{self.crs_id} != {other.crs_id}")
        if self.transform[1:3] + self.transform[4:] != other.transform[1:3] + other.transform[4:]:
            raise ValueError("grids do not share pixel size")
        col = (self.transform[0] - other.transform[0]) / other.pixel_width
        row = (self.transform[3] - other.transform[3]) / other.pixel_height
        rc, cc = round(row), round(col)
        if abs(row - rc) > 1e-6 or abs(col - cc) > 1e-6:
            raise ValueError("grids are not aligned on a common pixel lattice")
        return int(rc), int(cc)

    def to_affine(self):
        from affine import Affine

        return Affine.from_gdal(*self.transform)

    @classmethod
    def from_affine(cls, crs_id, affine, width, height):
        return cls(crs_id, affine.to_gdal(), width, height)


def _require_north_up(grid: RasterGrid):
    if grid.is_rotated:
        raise RotatedGridUnsupported(
            f"rotation coefficients must be 0, got {grid.transform[2]}, {grid.transform[4]}"
        )


def pixel_to_world(grid: RasterGrid, row, col):
    """World coordinates of the center of pixel (row, col)."""
    ox, pw, rr, oy, cr, ph = grid.transform
    c = col + 0.5
    r = row + 0.5
    return ox + c * pw + r * rr, oy + c * cr + r * ph


def world_to_pixel(grid: RasterGrid, x, y):
    """(row, col) of the pixel containing world point (x, y)."""
    _require_north_up(grid)
    ox, pw, _, oy, _, ph = grid.transform
    col = np.floor((np.asarray(x, dtype=float) - ox) / pw)
    row = np.floor((np.asarray(y, dtype=float) - oy) / ph)
    if col.ndim == 0:
        return int(row), int(col)
    return row.astype(np.int64), col.astype(np.int64)


def pixel_centers(grid: RasterGrid):
    """1-D arrays of center x per column and center y per row."""
    _require_north_up(grid)
    cols = np.arange(grid.width)
    rows = np.arange(grid.height)
    xs, _ = pixel_to_world(grid, 0, cols)
    _, ys = pixel_to_world(grid, rows, 0)
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


def _as_ring(points) -> tuple:
    ring = tuple((float(x), float(y)) for x, y, *_ in points)
    if len(ring) < 4:
        raise PolygonError(f"ring needs at least 4 vertices, got {len(ring)}")
    if ring[0] != ring[-1]:
        raise PolygonError("ring is not closed (first vertex != last vertex)")
    return ring


@dataclass(frozen=True)
class Polygon:
    exterior: tuple
    holes: tuple = ()
    attributes: dict = field(default_factory=dict, compare=False)
    crs_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "exterior", _as_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_as_ring(h) for h in self.holes))
        object.__setattr__(self, "crs_id", normalize_crs(self.crs_id))

    @classmethod
    def from_bounds(cls, minx, miny, maxx, maxy, attributes=None, crs_id=None):
        ring = [(minx, miny), (maxx, miny), (maxx, maxy), (minx, maxy), (minx, miny)]
        return cls(ring, (), dict(attributes or {}), crs_id)

    @classmethod
    def from_grid(cls, grid: RasterGrid, attributes=None):
        """Polygon covering the full extent of ``grid``."""
        return cls.from_bounds(*grid.bounds, attributes=attributes, crs_id=grid.crs_id)

    @property
    def fire_date(self) -> dt.date | None:
        value = self.attributes.get("fire_date")
        if value is None or isinstance(value, dt.date):
            return value
        return dt.date.fromisoformat(str(value)[:10])

    @property
    def bounds(self):
        xs = [p[0] for p in self.exterior]
        ys = [p[1] for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)

    def rings(self):
        return (self.exterior,) + self.holes

    def validate(self):
        """Check hole containment and ring validity with shapely."""
        from shapely.geometry import Polygon as ShapelyPolygon

        shell = ShapelyPolygon(self.exterior)
        if not shell.is_valid:
            raise PolygonError("exterior ring is not a valid simple ring")
        for hole in self.holes:
            if not shell.covers(ShapelyPolygon(hole)):
                raise PolygonError("hole is not contained in the exterior ring")
        return self

    def to_geojson_geometry(self):
        return {
            "type": "Polygon",
            "coordinates": [[list(p) for p in ring] for ring in self.rings()],
        }


@dataclass(frozen=True)
class BinaryMask:
    grid: RasterGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.grid.shape:
            raise ShapeError(f"mask shape {data.shape} does not match grid {self.grid.shape}")
        if data.size and not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        data = data.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: RasterGrid):
        return cls(grid, np.zeros(grid.shape, dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.data, other.data)

    __hash__ = None

    @property
    def count(self) -> int:
        return int(self.data.sum(dtype=np.int64))


def _check_crs(polygon: Polygon, grid: RasterGrid):
    if polygon.crs_id is not None and grid.crs_id is not None and polygon.crs_id != grid.crs_id:
        raise CRSMismatch(f"polygon CRS {polygon.crs_id} differs from grid CRS {grid.crs_id}")


def _ring_membership(ring, xs, ys):
    """Even-odd parity and on-boundary flags for points (xs[None, :], ys[:, None])."""
    X = xs[None, :]
    Y = ys[:, None]
    parity = np.zeros((ys.size, xs.size), dtype=bool)
    boundary = np.zeros_like(parity)
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        if y1 != y2:
            straddle = (y1 > Y) != (y2 > Y)
            x_cross = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
            parity ^= straddle & (X < x_cross)
        cross = (x2 - x1) * (Y - y1) - (y2 - y1) * (X - x1)
        in_box = (
            (X >= min(x1, x2)) & (X <= max(x1, x2)) & (Y >= min(y1, y2)) & (Y <= max(y1, y2))
        )
        boundary |= (cross == 0) & in_box
    return parity, boundary


def _polygon_window(polygon: Polygon, grid: RasterGrid, xs, ys):
    """Row and column slices of pixel centers inside the polygon's bounding box."""
    minx, miny, maxx, maxy = polygon.bounds
    cols = np.nonzero((xs >= minx) & (xs <= maxx))[0]
    rows = np.nonzero((ys >= miny) & (ys <= maxy))[0]
    if cols.size == 0 or rows.size == 0:
        return None
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def polygon_membership(polygon: Polygon, grid: RasterGrid) -> np.ndarray:
    """Boolean array: pixel center lies in the closed polygon (holes excluded)."""
    _check_crs(polygon, grid)
    xs, ys = pixel_centers(grid)
    out = np.zeros(grid.shape, dtype=bool)
    win = _polygon_window(polygon, grid, xs, ys)
    if win is None:
        return out
    rs, cs = win
    sub_x, sub_y = xs[cs], ys[rs]
    parity = np.zeros((sub_y.size, sub_x.size), dtype=bool)
    boundary = np.zeros_like(parity)
    for ring in polygon.rings():
        p, b = _ring_membership(ring, sub_x, sub_y)
        parity ^= p
        boundary |= b
    out[rs, cs] = parity | boundary
    return out


def rasterize_polygons(polygons: Iterable[Polygon], grid: RasterGrid) -> BinaryMask:
    """Burn polygons into a mask; a pixel is set when its center is in any polygon."""
    _require_north_up(grid)
    data = np.zeros(grid.shape, dtype=bool)
    for polygon in polygons:
        data |= polygon_membership(polygon, grid)
    return BinaryMask(grid, data.astype(np.uint8))


def zonal_counts(mask: BinaryMask, zone: Polygon, valid: np.ndarray | None = None):
    """(set pixels, counted pixels) among pixel centers inside ``zone``."""
    inside = polygon_membership(zone, mask.grid)
    if valid is not None:
        inside &= np.asarray(valid, dtype=bool)
    total = int(inside.sum())
    hits = int((mask.data.astype(bool) & inside).sum())
    return hits, total


def zonal_fraction(mask: BinaryMask, zone: Polygon, valid: np.ndarray | None = None) -> float:
    hits, total = zonal_counts(mask, zone, valid)
    if total == 0:
        warnings.warn("no pixel center falls inside the zone", ZeroZoneWarning, stacklevel=2)
        return 0.0
    return hits / total


# -- vector IO ---------------------------------------------------------------


def _geojson_crs(doc) -> str | None:
    crs = doc.get("crs")
    if not crs:
        return None
    props = crs.get("properties", {})
    return normalize_crs(props.get("name") or props.get("code"))


def _resolve_crs(declared, override, path) -> str:
    declared, override = normalize_crs(declared), normalize_crs(override)
    if declared and override and declared != override:
        raise CRSMismatch(f"{path} declares {declared} but {override} was requested")
    crs = declared or override
    if crs is None:
        raise PolygonError(f"{path} does not declare a CRS; pass one explicitly")
    return crs


def _coerce_attributes(props: dict) -> dict:
    attrs = dict(props or {})
    if attrs.get("fire_date") is not None:
        try:
            attrs["fire_date"] = dt.date.fromisoformat(str(attrs["fire_date"])[:10])
        except ValueError as exc:
            raise PolygonError(f"bad fire_date {attrs['fire_date']!r}") from exc
    return attrs


def polygons_from_geojson(doc: dict, crs_id=None, source="<geojson>") -> list[Polygon]:
    crs = _resolve_crs(_geojson_crs(doc), crs_id, source)
    if doc.get("type") == "FeatureCollection":
        features = doc.get("features", [])
    elif doc.get("type") == "Feature":
        features = [doc]
    else:
        raise PolygonError(f"{source}: expected a FeatureCollection")
    out = []
    for i, feat in enumerate(features):
        geom = feat.get("geometry") or {}
        attrs = _coerce_attributes(feat.get("properties"))
        if geom.get("type") == "Polygon":
            parts = [geom["coordinates"]]
        elif geom.get("type") == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise PolygonError(f"{source}: feature {i} is a {geom.get('type')}, not a polygon")
        for rings in parts:
            try:
                poly = Polygon(rings[0], tuple(rings[1:]), attrs, crs).validate()
            except PolygonError as exc:
                raise PolygonError(f"{source}: feature {i}: {exc}") from None
            out.append(poly)
    return out


def _signed_area(ring) -> float:
    return 0.5 * sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]))


def _prj_to_crs(prj_path: Path) -> str | None:
    if not prj_path.exists():
        return None
    from rasterio.crs import CRS

    crs = CRS.from_wkt(prj_path.read_text())
    epsg = crs.to_epsg()
    return f"EPSG:{epsg}" if epsg else crs.to_string()


def polygons_from_shapefile(path, crs_id=None) -> list[Polygon]:
    import shapefile

    path = Path(path)
    crs = _resolve_crs(_prj_to_crs(path.with_suffix(".prj")), crs_id, path)
    try:
        reader = shapefile.Reader(str(path))
    except Exception as exc:
        raise ReadFailure(path, str(exc)) from exc
    out = []
    with reader:
        names = [f[0] for f in reader.fields[1:]]
        for i, sr in enumerate(reader.iterShapeRecords()):
            attrs = _coerce_attributes(dict(zip(names, sr.record)))
            pts = sr.shape.points
            bounds = list(sr.shape.parts) + [len(pts)]
            shells: list[list] = []
            for a, b in zip(bounds[:-1], bounds[1:]):
                ring = [tuple(p) for p in pts[a:b]]
                # shapefile exteriors are clockwise, holes counter-clockwise
                if _signed_area(ring) <= 0 or not shells:
                    shells.append([ring])
                else:
                    shells[-1].append(ring)
            for rings in shells:
                try:
                    out.append(Polygon(rings[0], tuple(rings[1:]), attrs, crs).validate())
                except PolygonError as exc:
                    raise PolygonError(f"{path}: record {i}: {exc}") from None
    return out


def read_polygons(path, crs_id=None) -> list[Polygon]:
    """Load polygons from a GeoJSON FeatureCollection or an ESRI Shapefile."""
    path = Path(path)
    if not path.exists():
        raise ReadFailure(path, "file does not exist")
    if path.suffix.lower() == ".shp":
        return polygons_from_shapefile(path, crs_id)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ReadFailure(path, str(exc)) from exc
    return polygons_from_geojson(doc, crs_id, source=str(path))


def _json_default(value):
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def polygons_to_geojson(polygons: Sequence[Polygon], crs_id=None) -> dict:
    crs_id = normalize_crs(crs_id) or next((p.crs_id for p in polygons if p.crs_id), None)
    doc = {"type": "FeatureCollection"}
    if crs_id:
        doc["crs"] = {"type": "name", "properties": {"name": crs_id}}
    doc["features"] = [
        {"type": "Feature", "properties": p.attributes, "geometry": p.to_geojson_geometry()}
        for p in polygons
    ]
    return json.loads(json.dumps(doc, default=_json_default))


def write_polygons(polygons: Sequence[Polygon], path, crs_id=None) -> Path:
    path = Path(path)
    doc = polygons_to_geojson(polygons, crs_id)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path

