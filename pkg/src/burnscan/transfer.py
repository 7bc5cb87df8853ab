"""Region-scale inference, district burned-area series and reference comparison."""
from __future__ import annotations

import calendar
import csv
import datetime as dt
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import PATCH_SIZE, extract_windows, read_store
from .errors import CRSMismatch, DataError, NoCoverage, NoOverlap, ZeroZoneWarning
from .geo import BinaryMask, Polygon, RasterGrid, pixel_centers, read_polygons, zonal_counts
from .ingest import CompositeRaster
from .metrics import EvalReport, evaluate
from .raster_io import read_mask, read_raster, write_mask, write_raster

REGION_CONTROL = "REGION_CONTROL"
SERIES_HEADER = ("zone_name", "period", "burned_fraction", "burned_area_km2", "n_valid_pixels")

# settlement, district, total refugees, established
WEST_NILE_SETTLEMENTS = (
    ("Rhino Camp", "Arua", 116374, "1980"),
    ("Imvempi", "Arua", 64486, "02/2017"),
    ("Bidi Bidi", "Yumbe", 231395, "08/2016"),
    ("Lobule", "Koboke", 5393, "09/2013"),
    ("Palorinya", "Moyo", 122238, "12/2016"),
    ("Adjumani", "Adjumani", 212710, "2014-2018"),
)


# -- periods -----------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Period:
    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"period ends before it starts: {self.start} > {self.end}")

    @property
    def label(self) -> str:
        s, e = self.start, self.end
        if (s.month, s.day, e.month, e.day) == (1, 1, 12, 31) and s.year == e.year:
            return str(s.year)
        if s.day == 1 and s.year == e.year and s.month == e.month and e.day == calendar.monthrange(e.year, e.month)[1]:
            return f"{s.year}-{s.month:02d}"
        return f"{s.isoformat()}/{e.isoformat()}"

    def contains(self, date: dt.date) -> bool:
        return self.start <= date <= self.end

    @classmethod
    def year(cls, year: int):
        return cls(dt.date(year, 1, 1), dt.date(year, 12, 31))

    @classmethod
    def month(cls, year: int, month: int):
        return cls(dt.date(year, month, 1), dt.date(year, month, calendar.monthrange(year, month)[1]))

    @classmethod
    def parse(cls, text: str):
        text = text.strip()
        if re.fullmatch(r"\d{4}", text):
            return cls.year(int(text))
        if re.fullmatch(r"\d{4}-\d{2}", text):
            y, m = map(int, text.split("-"))
            return cls.month(y, m)
        start, _, end = text.partition("/")
        return cls(dt.date.fromisoformat(start), dt.date.fromisoformat(end))


def calendar_years(first=2015, last=2020) -> list[Period]:
    return [Period.year(y) for y in range(first, last + 1)]


# -- districts ---------------------------------------------------------------------


def parse_established(text) -> tuple[dt.date, dt.date]:
    """``"1980"``, ``"02/2017"`` or ``"2014-2018"`` to an inclusive date range."""
    text = str(text).strip()
    if m := re.fullmatch(r"(\d{4})", text):
        y = int(m.group(1))
        return dt.date(y, 1, 1), dt.date(y, 12, 31)
    if m := re.fullmatch(r"(\d{1,2})/(\d{4})", text):
        mo, y = int(m.group(1)), int(m.group(2))
        return Period.month(y, mo).start, Period.month(y, mo).end
    if m := re.fullmatch(r"(\d{4})\s*-\s*(\d{4})", text):
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ValueError(f"establishment range {text!r} is reversed")
        return dt.date(a, 1, 1), dt.date(b, 12, 31)
    raise ValueError(f"unrecognised establishment date {text!r}")


@dataclass(frozen=True)
class DistrictConfig:
    district_name: str
    settlement_name: str
    established: tuple
    total_refugees: int
    boundary: Polygon = field(compare=False)


def _as_count(value) -> int:
    return int(str(value).replace(",", "").strip())


def read_districts(path, crs_id=None) -> list[DistrictConfig]:
    out = []
    for poly in read_polygons(path, crs_id):
        a = poly.attributes
        try:
            out.append(
                DistrictConfig(
                    district_name=str(a["district"]),
                    settlement_name=str(a.get("settlement", "")),
                    established=parse_established(a["established"]),
                    total_refugees=_as_count(a.get("total_refugees", 0)),
                    boundary=poly,
                )
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad district properties {a}: {exc}") from None
    return out


def read_region(path, crs_id=None) -> Polygon:
    polys = read_polygons(path, crs_id)
    if len(polys) != 1:
        raise DataError(f"{path}: region file must hold exactly one polygon, found {len(polys)}")
    return polys[0]


# -- mosaicking ----------------------------------------------------------------------


@dataclass(frozen=True)
class RegionMosaic:
    grid: RasterGrid
    prob: np.ndarray
    burned: BinaryMask
    valid: BinaryMask
    period: Period | None
    provenance: tuple
    threshold: float = 0.5

    @property
    def burned_fraction(self) -> float:
        n = self.valid.count
        return 0.0 if n == 0 else int((self.burned.data & self.valid.data).sum()) / n


def _union_grid(grids: Sequence[RasterGrid]) -> RasterGrid:
    crs = {g.crs_id for g in grids}
    if len(crs) > 1:
        raise CRSMismatch(f"composites span several CRSs: {sorted(map(str, crs))}")
    ref = grids[0]
    minx = min(g.bounds[0] for g in grids)
    maxx = max(g.bounds[2] for g in grids)
    miny = min(g.bounds[1] for g in grids)
    maxy = max(g.bounds[3] for g in grids)
    pw, ph = ref.pixel_width, ref.pixel_height
    width = int(round((maxx - minx) / abs(pw)))
    height = int(round((maxy - miny) / abs(ph)))
    return RasterGrid(ref.crs_id, (minx, pw, 0.0, maxy, 0.0, ph), width, height)


def _predict_composite(model, comp: CompositeRaster, batch_size: int) -> np.ndarray:
    """Max-combined probability over stride-128 plus edge-aligned windows."""
    channels = comp.channels
    h, w = comp.grid.shape
    ph, pw = max(PATCH_SIZE - h, 0), max(PATCH_SIZE - w, 0)
    if ph or pw:
        channels = np.pad(channels, ((0, 0), (0, ph), (0, pw)))
        padded = RasterGrid(comp.grid.crs_id, comp.grid.transform, w + pw, h + ph)
        comp = CompositeRaster(padded, channels, comp.sensing_date, comp.scene_id,
                               BinaryMask.zeros(padded))
    windows = extract_windows(comp, PATCH_SIZE, edge_aligned=True)
    prob = np.zeros(comp.grid.shape, dtype=np.float32)
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        X = np.stack([channels[:, win.slices()[0], win.slices()[1]] for win in chunk])
        for win, p in zip(chunk, model.predict_proba(X)):
            rs, cs = win.slices()
            np.maximum(prob[rs, cs], p, out=prob[rs, cs])
    return prob[:h, :w]


def infer_region(
    model,
    composites: Sequence[CompositeRaster],
    threshold: float = 0.5,
    period: Period | None = None,
    combine: str = "max",
    batch_size: int = 16,
) -> RegionMosaic:
    """Tile, predict and mosaic composites onto their common grid.

    Overlapping windows and scenes are merged by per-pixel maximum (or mean
    with ``combine="mean"``). Only valid composite pixels contribute.
    """
    composites = list(composites)
    if not composites:
        raise NoCoverage("no composites to infer on")
    if combine not in ("max", "mean"):
        raise ValueError(f"combine must be 'max' or 'mean', got {combine!r}")
    grid = _union_grid([c.grid for c in composites])
    acc = np.zeros(grid.shape, dtype=np.float64 if combine == "mean" else np.float32)
    count = np.zeros(grid.shape, dtype=np.int32)
    for comp in composites:
        prob = _predict_composite(model, comp, batch_size)
        r0, c0 = comp.grid.offset_in(grid)
        h, w = comp.grid.shape
        region = (slice(r0, r0 + h), slice(c0, c0 + w))
        valid = comp.valid_mask.data.astype(bool)
        if combine == "max":
            acc[region] = np.where(valid, np.maximum(acc[region], prob), acc[region])
        else:
            acc[region] += np.where(valid, prob, 0.0)
        count[region] += valid
    covered = count > 0
    if combine == "mean":
        acc = np.where(covered, acc / np.maximum(count, 1), 0.0)
    prob = acc.astype(np.float32)
    burned = (prob >= threshold) & covered
    return RegionMosaic(
        grid=grid,
        prob=prob,
        burned=BinaryMask(grid, burned.astype(np.uint8)),
        valid=BinaryMask(grid, covered.astype(np.uint8)),
        period=period,
        provenance=tuple(sorted(c.scene_id for c in composites)),
        threshold=threshold,
    )


def save_mosaic(mosaic: RegionMosaic, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prob = np.where(mosaic.valid.data.astype(bool), mosaic.prob, np.nan).astype(np.float32)
    paths = [
        write_raster(directory / "prob.tif", prob, mosaic.grid, nodata=float("nan")),
        write_mask(directory / "burned.tif", mosaic.burned, valid=mosaic.valid.data),
    ]
    meta = {
        "period": mosaic.period.label if mosaic.period else None,
        "period_start": mosaic.period.start.isoformat() if mosaic.period else None,
        "period_end": mosaic.period.end.isoformat() if mosaic.period else None,
        "provenance": list(mosaic.provenance),
        "threshold": mosaic.threshold,
        "burned_fraction": mosaic.burned_fraction,
    }
    meta_path = directory / "mosaic.json"
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return paths + [meta_path]


def load_mosaic(directory) -> RegionMosaic:
    directory = Path(directory)
    meta = json.loads((directory / "mosaic.json").read_text())
    prob, grid, _, _ = read_raster(directory / "prob.tif")
    burned, valid = read_mask(directory / "burned.tif")
    period = None
    if meta.get("period_start"):
        period = Period(dt.date.fromisoformat(meta["period_start"]), dt.date.fromisoformat(meta["period_end"]))
    return RegionMosaic(
        grid=grid,
        prob=np.nan_to_num(prob[0], nan=0.0).astype(np.float32),
        burned=burned,
        valid=BinaryMask(grid, valid.astype(np.uint8)),
        period=period,
        provenance=tuple(meta.get("provenance", ())),
        threshold=float(meta.get("threshold", 0.5)),
    )


# -- district series ------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesRow:
    zone_name: str
    period: str
    burned_fraction: float
    burned_area_km2: float
    n_valid_pixels: int


@dataclass
class DistrictSeries:
    rows: list

    def zone(self, name: str) -> list:
        return [r for r in self.rows if r.zone_name == name]

    def get(self, zone_name: str, period: str) -> SeriesRow:
        for r in self.rows:
            if r.zone_name == zone_name and r.period == period:
                return r
        raise KeyError((zone_name, period))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SERIES_HEADER)
            for r in self.rows:
                writer.writerow([r.zone_name, r.period, repr(r.burned_fraction),
                                 repr(r.burned_area_km2), r.n_valid_pixels])
        return path

    @classmethod
    def read_csv(cls, path):
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            return cls([
                SeriesRow(r["zone_name"], r["period"], float(r["burned_fraction"]),
                          float(r["burned_area_km2"]), int(r["n_valid_pixels"]))
                for r in reader
            ])


def _unique_zones(districts: Iterable[DistrictConfig]) -> dict:
    zones: dict = {}
    for d in districts:
        prev = zones.get(d.district_name)
        if prev is not None and prev.rings() != d.boundary.rings():
            raise DataError(f"district {d.district_name!r} has conflicting boundaries")
        zones[d.district_name] = d.boundary
    return zones


def _series_row(name, mosaic: RegionMosaic, zone: Polygon, label) -> SeriesRow:
    hits, total = zonal_counts(mosaic.burned, zone, mosaic.valid.data)
    if total == 0:
        warnings.warn(f"zone {name!r} has no valid pixels in period {label}", ZeroZoneWarning, stacklevel=3)
        fraction = 0.0
    else:
        fraction = hits / total
    return SeriesRow(name, label, fraction, fraction * total * mosaic.grid.pixel_area_km2, total)


def build_series(
    mosaics: Iterable[RegionMosaic],
    districts: Iterable[DistrictConfig],
    region_boundary: Polygon,
) -> DistrictSeries:
    """Burned fraction per district and period, plus a ``REGION_CONTROL`` row per period.

    Rows are sorted by period, then zone name, with the control row last, so
    the result does not depend on input order.
    """
    zones = _unique_zones(districts)
    rows = []
    for i, mosaic in enumerate(mosaics):
        label = mosaic.period.label if mosaic.period else f"mosaic{i}"
        for name, boundary in zones.items():
            rows.append(_series_row(name, mosaic, boundary, label))
        rows.append(_series_row(REGION_CONTROL, mosaic, region_boundary, label))
    rows.sort(key=lambda r: (r.period, r.zone_name == REGION_CONTROL, r.zone_name))
    return DistrictSeries(rows)


# -- reference comparison ---------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    period: str | None
    agree_burned: int
    ours_only: int
    reference_only: int
    agree_unburned: int
    pixel_area_km2: float

    @property
    def total(self) -> int:
        return self.agree_burned + self.ours_only + self.reference_only + self.agree_unburned

    def areas_km2(self) -> dict:
        a = self.pixel_area_km2
        return {
            "agree_burned": self.agree_burned * a,
            "ours_only": self.ours_only * a,
            "reference_only": self.reference_only * a,
            "agree_unburned": self.agree_unburned * a,
        }

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "agree_burned": self.agree_burned,
            "ours_only": self.ours_only,
            "reference_only": self.reference_only,
            "agree_unburned": self.agree_unburned,
            "total_pixels": self.total,
            "pixel_area_km2": self.pixel_area_km2,
            "areas_km2": self.areas_km2(),
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path


def compare_reference(mosaic: RegionMosaic, reference: BinaryMask, reference_valid=None) -> ComparisonReport:
    """Confusion partition of our mosaic against a coarse reference mask.

    The reference is sampled at each mosaic pixel center (nearest neighbour);
    only pixels valid in both and inside the reference extent are counted.
    """
    if mosaic.grid.crs_id != reference.grid.crs_id:
        raise CRSMismatch(f"mosaic {mosaic.grid.crs_id} vs reference {reference.grid.crs_id}")
    xs, ys = pixel_centers(mosaic.grid)
    ox, pw, _, oy, _, ph = reference.grid.transform
    cols = np.floor((xs - ox) / pw).astype(np.int64)
    rows = np.floor((ys - oy) / ph).astype(np.int64)
    col_ok = (cols >= 0) & (cols < reference.grid.width)
    row_ok = (rows >= 0) & (rows < reference.grid.height)
    inside = row_ok[:, None] & col_ok[None, :]
    rr = np.clip(rows, 0, reference.grid.height - 1)
    cc = np.clip(cols, 0, reference.grid.width - 1)
    ref = reference.data.astype(bool)[np.ix_(rr, cc)]
    compared = inside & mosaic.valid.data.astype(bool)
    if reference_valid is not None:
        compared &= np.asarray(reference_valid, dtype=bool)[np.ix_(rr, cc)]
    if not compared.any():
        raise NoOverlap("mosaic and reference share no valid pixels")
    ours = mosaic.burned.data.astype(bool)
    return ComparisonReport(
        period=mosaic.period.label if mosaic.period else None,
        agree_burned=int((ours & ref & compared).sum()),
        ours_only=int((ours & ~ref & compared).sum()),
        reference_only=int((~ours & ref & compared).sum()),
        agree_unburned=int((~ours & ~ref & compared).sum()),
        pixel_area_km2=mosaic.grid.pixel_area_km2,
    )


# -- hand-label evaluation -----------------------------------------------------------------


def evaluate_handlabels(model, handlabels, threshold: float = 0.5) -> EvalReport:
    """Score the model on hand-labeled target-region patches (a store path or patch list)."""
    if isinstance(handlabels, (str, Path)):
        _, handlabels = read_store(handlabels)
    return evaluate(model, handlabels, threshold, domain="transfer")
