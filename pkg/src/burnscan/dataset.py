"""Labeled 128x128 patch extraction, train/test splitting and the on-disk patch store."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptStore, MissingFireDate
from .geo import Polygon, RasterGrid, rasterize_polygons
from .ingest import CompositeRaster
from .raster_io import read_raster, write_raster

PATCH_SIZE = 128
DEFAULT_WINDOW_DAYS = 90
SPLIT_TAGS = ("train", "test", "unassigned")
STORE_FORMAT = "burnscan-patch-store"
STORE_VERSION = 1


@dataclass(frozen=True)
class PatchWindow:
    scene_id: str
    row_off: int
    col_off: int
    grid: RasterGrid
    size: int = PATCH_SIZE

    @property
    def patch_id(self) -> str:
        return f"{self.scene_id}_r{self.row_off:05d}_c{self.col_off:05d}"

    def slices(self):
        return (
            slice(self.row_off, self.row_off + self.size),
            slice(self.col_off, self.col_off + self.size),
        )


@dataclass
class LabeledPatch:
    window: PatchWindow
    channels: np.ndarray
    label: np.ndarray
    sensing_date: dt.date
    split_tag: str = "unassigned"

    @property
    def patch_id(self) -> str:
        return self.window.patch_id

    @property
    def burned_fraction(self) -> float:
        return float(self.label.mean())


@dataclass(frozen=True)
class PatchRecord:
    patch_id: str
    scene_id: str
    row_off: int
    col_off: int
    sensing_date: str
    burned_fraction: float
    split_tag: str = "unassigned"


@dataclass
class DatasetManifest:
    records: list
    split_seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.patch_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("patch ids must be unique")

    @property
    def counts(self) -> dict:
        out = {tag: 0 for tag in SPLIT_TAGS}
        for r in self.records:
            out[r.split_tag] += 1
        out["total"] = len(self.records)
        return out

    def ids(self, split: str | None = None) -> list:
        return [r.patch_id for r in self.records if split is None or r.split_tag == split]

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "split_seed": self.split_seed,
            "counts": self.counts,
            "metadata": self.metadata,
        }


def extract_windows(
    composite: CompositeRaster, stride: int = PATCH_SIZE, edge_aligned: bool = False
) -> list[PatchWindow]:
    """Regular tiling from (0, 0); windows overflowing the raster are dropped.

    With ``edge_aligned`` an extra row/column of windows is anchored at the
    bottom/right edges so every pixel is covered (used for inference).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = composite.grid.shape
    if h < PATCH_SIZE or w < PATCH_SIZE:
        return []
    rows = list(range(0, h - PATCH_SIZE + 1, stride))
    cols = list(range(0, w - PATCH_SIZE + 1, stride))
    if edge_aligned:
        if rows[-1] != h - PATCH_SIZE:
            rows.append(h - PATCH_SIZE)
        if cols[-1] != w - PATCH_SIZE:
            cols.append(w - PATCH_SIZE)
    return [
        PatchWindow(
            composite.scene_id, r, c, composite.grid.window(r, c, PATCH_SIZE, PATCH_SIZE)
        )
        for r in rows
        for c in cols
    ]


def date_filter(polygons: Iterable[Polygon], sensing_date: dt.date, window_days=DEFAULT_WINDOW_DAYS):
    """Polygons whose fire date is 0..window_days days before ``sensing_date``."""
    kept = []
    for p in polygons:
        fire_date = p.fire_date
        if fire_date is None:
            raise MissingFireDate(f"polygon {p.attributes or p.bounds} has no fire_date")
        if 0 <= (sensing_date - fire_date).days <= window_days:
            kept.append(p)
    return kept


def match_labels(
    window: PatchWindow,
    polygons: Sequence[Polygon],
    sensing_date: dt.date,
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> np.ndarray:
    recent = date_filter(polygons, sensing_date, window_days)
    return rasterize_polygons(recent, window.grid).data


def label_composite(
    composite: CompositeRaster,
    polygons: Sequence[Polygon],
    stride: int = PATCH_SIZE,
    window_days: int = DEFAULT_WINDOW_DAYS,
):
    """All fully-valid windows of a composite with their labels.

    Returns ``(patches, n_dropped_invalid)``.
    """
    recent = date_filter(polygons, composite.sensing_date, window_days)
    full = rasterize_polygons(recent, composite.grid).data
    valid = composite.valid_mask.data.astype(bool)
    patches, dropped = [], 0
    for win in extract_windows(composite, stride):
        rs, cs = win.slices()
        if not valid[rs, cs].all():
            dropped += 1
            continue
        patches.append(
            LabeledPatch(
                window=win,
                channels=composite.channels[:, rs, cs].copy(),
                label=full[rs, cs].copy(),
                sensing_date=composite.sensing_date,
            )
        )
    return patches, dropped


def filter_burned(patches: Iterable[LabeledPatch], min_burned_fraction: float = 0.0):
    return [p for p in patches if p.burned_fraction > min_burned_fraction]


def manifest_from_patches(patches: Sequence[LabeledPatch], metadata=None) -> DatasetManifest:
    records = [
        PatchRecord(
            patch_id=p.patch_id,
            scene_id=p.window.scene_id,
            row_off=p.window.row_off,
            col_off=p.window.col_off,
            sensing_date=p.sensing_date.isoformat(),
            burned_fraction=p.burned_fraction,
            split_tag=p.split_tag,
        )
        for p in patches
    ]
    return DatasetManifest(records, None, dict(metadata or {}))


def split_dataset(
    manifest: DatasetManifest, train_ratio: float = 0.7, seed: int = 0, by: str = "patch"
) -> DatasetManifest:
    """Assign train/test tags by a seeded random permutation.

    ``by="patch"`` puts exactly ``floor(train_ratio * N)`` patches in train.
    ``by="scene"`` keeps every scene on one side (avoids leakage between
    neighbouring windows) and fills train greedily up to that target.
    """
    if any(r.split_tag != "unassigned" for r in manifest.records):
        raise ValueError("manifest is already split")
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must be in (0, 1)")
    records = sorted(manifest.records, key=lambda r: r.patch_id)
    n = len(records)
    n_train = math.floor(train_ratio * n + 1e-9)
    rng = np.random.default_rng(seed)
    if by == "patch":
        order = rng.permutation(n)
        train = set(int(i) for i in order[:n_train])
        tags = ["train" if i in train else "test" for i in range(n)]
    elif by == "scene":
        scenes = sorted({r.scene_id for r in records})
        sizes = {s: 0 for s in scenes}
        for r in records:
            sizes[r.scene_id] += 1
        train_scenes, filled = set(), 0
        for i in rng.permutation(len(scenes)):
            s = scenes[int(i)]
            if filled + sizes[s] <= n_train:
                train_scenes.add(s)
                filled += sizes[s]
        tags = ["train" if r.scene_id in train_scenes else "test" for r in records]
    else:
        raise ValueError(f"unknown split unit {by!r}")
    new = [replace(r, split_tag=t) for r, t in zip(records, tags)]
    meta = dict(manifest.metadata, split=f"random-{by}", train_ratio=train_ratio)
    return DatasetManifest(new, seed, meta)


def apply_split(patches: Sequence[LabeledPatch], manifest: DatasetManifest) -> list[LabeledPatch]:
    tags = {r.patch_id: r.split_tag for r in manifest.records}
    return [replace(p, split_tag=tags[p.patch_id]) for p in patches]


# -- patch store ---------------------------------------------------------------


def _image_path(directory: Path, patch_id: str) -> Path:
    return directory / "patches" / f"{patch_id}.tif"


def _label_path(directory: Path, patch_id: str) -> Path:
    return directory / "patches" / f"{patch_id}_label.tif"


def _store_checksum(directory: Path, body: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(body, sort_keys=True).encode())
    for rec in body["records"]:
        for path in (_image_path(directory, rec["patch_id"]), _label_path(directory, rec["patch_id"])):
            try:
                h.update(hashlib.sha256(path.read_bytes()).digest())
            except FileNotFoundError:
                raise CorruptStore(f"missing patch file {path}") from None
    return h.hexdigest()


def write_store(manifest: DatasetManifest, patches: Sequence[LabeledPatch], directory) -> Path:
    """Persist patches as GeoTIFFs plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    by_id = {p.patch_id: p for p in patches}
    if set(by_id) != set(manifest.ids()):
        raise ValueError("patches and manifest records differ")
    directory.mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        p = by_id[rec.patch_id]
        write_raster(_image_path(directory, rec.patch_id), p.channels.astype(np.float32), p.window.grid)
        write_raster(_label_path(directory, rec.patch_id), p.label.astype(np.uint8), p.window.grid)
    body = {"format": STORE_FORMAT, "version": STORE_VERSION, **manifest.to_dict()}
    body["checksum"] = _store_checksum(directory, body)
    path = directory / "manifest.json"
    path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(directory) -> DatasetManifest:
    directory = Path(directory)
    path = directory / "manifest.json"
    try:
        body = json.loads(path.read_text())
    except FileNotFoundError:
        raise CorruptStore(f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise CorruptStore(f"{path} is not valid JSON: {exc}") from None
    if body.get("format") != STORE_FORMAT:
        raise CorruptStore(f"{path} is not a patch store manifest")
    checksum = body.pop("checksum", None)
    try:
        records = [PatchRecord(**r) for r in body["records"]]
        manifest = DatasetManifest(records, body.get("split_seed"), body.get("metadata", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptStore(f"{path}: malformed records ({exc})") from None
    if body.get("counts") != manifest.counts:
        raise CorruptStore(f"{path}: counts {body.get('counts')} disagree with records")
    if checksum != _store_checksum(directory, body):
        raise CorruptStore(f"{path}: checksum mismatch")
    return manifest


def read_store(directory, split: str | None = None):
    """Return ``(manifest, patches)``, optionally only patches tagged ``split``."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    patches = []
    for rec in manifest.records:
        if split is not None and rec.split_tag != split:
            continue
        img, grid, _, _ = read_raster(_image_path(directory, rec.patch_id))
        lbl, _, _, _ = read_raster(_label_path(directory, rec.patch_id))
        window = PatchWindow(rec.scene_id, rec.row_off, rec.col_off, grid)
        patches.append(
            LabeledPatch(
                window=window,
                channels=img,
                label=lbl[0],
                sensing_date=dt.date.fromisoformat(rec.sensing_date),
                split_tag=rec.split_tag,
            )
        )
    return manifest, patches


def stack_patches(patches: Sequence[LabeledPatch]):
    """``(X, y)`` arrays shaped ``(n, 3, 128, 128)`` and ``(n, 128, 128)``."""
    if not patches:
        return (
            np.zeros((0, 3, PATCH_SIZE, PATCH_SIZE), np.float32),
            np.zeros((0, PATCH_SIZE, PATCH_SIZE), np.uint8),
        )
    X = np.stack([p.channels for p in patches]).astype(np.float32)
    y = np.stack([p.label for p in patches]).astype(np.uint8)
    return X, y
