import datetime as dt
import json

import numpy as np
import pytest

from burnscan.dataset import (
    DatasetManifest, LabeledPatch, PatchRecord, PatchWindow, apply_split, extract_windows,
    filter_burned, label_composite, manifest_from_patches, match_labels, read_manifest,
    read_store, split_dataset, stack_patches, write_store,
)
from burnscan.errors import CorruptStore, MissingFireDate
from burnscan.geo import BinaryMask, Polygon, RasterGrid, rasterize_polygons
from burnscan.ingest import CompositeRaster
from burnscan.synthetic import SyntheticSceneSpec, coarse_reference, generate_synthetic_scene

from conftest import CRS, day, random_star
from oracles import rasterize_bruteforce


def blank(h, w, scene="S"):
    g = RasterGrid.north_up(CRS, 0, 0, 20, w, h)
    return CompositeRaster(g, np.zeros((3, h, w), np.float32), day(0), scene,
                           BinaryMask(g, np.ones((h, w), np.uint8)))


@pytest.mark.parametrize("h, w, n", [(1280, 1280, 100), (127, 500, 0), (128, 128, 1), (300, 260, 4)])
def test_window_counts(h, w, n):
    assert len(extract_windows(blank(h, w))) == n


def test_windows_are_disjoint_and_inside():
    wins = extract_windows(blank(400, 300))
    covered = np.zeros((400, 300), int)
    for win in wins:
        covered[win.slices()] += 1
        assert win.grid.shape == (128, 128)
    assert covered.max() == 1 and covered.sum() == len(wins) * 128 * 128


def test_edge_aligned_windows_cover_everything():
    wins = extract_windows(blank(300, 260), edge_aligned=True)
    covered = np.zeros((300, 260), int)
    for win in wins:
        covered[win.slices()] += 1
    assert covered.min() >= 1 and len(wins) == 9


def test_window_grid_offset():
    win = extract_windows(blank(256, 256))[3]
    assert (win.row_off, win.col_off) == (128, 128)
    assert win.grid.origin == (128 * 20.0, -128 * 20.0)
    assert win.patch_id == "S_r00128_c00128"


def _poly(fire, bounds=(0, -2560, 2560, 0)):
    return Polygon.from_bounds(*bounds, crs_id=CRS, attributes={"fire_date": fire.isoformat()})


@pytest.mark.parametrize("age, burned", [(0, True), (45, True), (90, True), (91, False), (-1, False)])
def test_match_labels_date_window(age, burned):
    (win,) = extract_windows(blank(128, 128))
    label = match_labels(win, [_poly(day(-age))], day(0))
    assert label.all() if burned else not label.any()


def test_match_labels_two_polygons_half():
    (win,) = extract_windows(blank(128, 128))
    left = _poly(day(-10), (0, -2560, 1280, 0))
    right_old = _poly(day(-200), (1280, -2560, 2560, 0))
    label = match_labels(win, [left, right_old], day(0))
    assert label.mean() == 0.5 and label[:, :64].all()


def test_match_labels_missing_fire_date():
    (win,) = extract_windows(blank(128, 128))
    with pytest.raises(MissingFireDate):
        match_labels(win, [Polygon.from_bounds(0, -10, 10, 0, crs_id=CRS)], day(0))


def test_labels_equal_rasterization_oracle():
    rng = np.random.default_rng(21)
    comp = blank(256, 256)
    polys = [random_star(rng, comp.grid, attributes={"fire_date": day(-5).isoformat()}) for _ in range(4)]
    patches, dropped = label_composite(comp, polys)
    assert dropped == 0 and len(patches) == 4
    for p in patches:
        assert np.array_equal(p.label, rasterize_bruteforce(polys, p.window.grid))


def test_label_composite_drops_invalid_windows():
    comp = blank(256, 256)
    valid = np.ones((256, 256), np.uint8)
    valid[200, 10] = 0
    comp = CompositeRaster(comp.grid, comp.channels, comp.sensing_date, comp.scene_id,
                           BinaryMask(comp.grid, valid))
    patches, dropped = label_composite(comp, [])
    assert dropped == 1 and len(patches) == 3


def _patch(i, frac=0.0, scene="S"):
    g = RasterGrid.north_up(CRS, 0, 0, 20, 128, 128)
    label = np.zeros((128, 128), np.uint8)
    label.flat[: int(frac * 128 * 128)] = 1
    chans = np.full((3, 128, 128), i / 100, np.float32)
    return LabeledPatch(PatchWindow(scene, 0, i * 128, g), chans, label, day(0))


def test_filter_burned():
    patches = [_patch(0, 0.0), _patch(1, 0.1), _patch(2, 0.5)]
    assert [p.window.col_off for p in filter_burned(patches)] == [128, 256]
    assert len(filter_burned(patches, 0.2)) == 1


def _manifest(n, scenes=1):
    recs = [PatchRecord(f"s{i % scenes}_p{i:05d}", f"s{i % scenes}", 0, i, "2016-08-15", 0.1) for i in range(n)]
    return DatasetManifest(recs)


@pytest.mark.parametrize("n, train, test", [(2704, 1892, 812), (10, 7, 3), (1, 0, 1), (0, 0, 0)])
def test_split_counts(n, train, test):
    counts = split_dataset(_manifest(n), 0.7, seed=4).counts
    assert (counts["train"], counts["test"], counts["unassigned"]) == (train, test, 0)


def test_split_deterministic_and_partition():
    a = split_dataset(_manifest(500), seed=9)
    b = split_dataset(_manifest(500), seed=9)
    c = split_dataset(_manifest(500), seed=10)
    assert a.ids("train") == b.ids("train") and a.ids("train") != c.ids("train")
    assert set(a.ids("train")).isdisjoint(a.ids("test"))
    assert set(a.ids("train")) | set(a.ids("test")) == set(_manifest(500).ids())


def test_split_independent_of_input_order():
    m = _manifest(50)
    shuffled = DatasetManifest(list(reversed(m.records)))
    assert split_dataset(m, seed=1).ids("train") == split_dataset(shuffled, seed=1).ids("train")


def test_split_by_scene_keeps_scenes_together():
    m = split_dataset(_manifest(300, scenes=7), seed=2, by="scene")
    sides = {}
    for r in m.records:
        sides.setdefault(r.scene_id, set()).add(r.split_tag)
    assert all(len(s) == 1 for s in sides.values())
    assert m.counts["train"] <= 210


def test_split_rejects_resplit():
    with pytest.raises(ValueError):
        split_dataset(split_dataset(_manifest(5)))


def _store(tmp_path, n=5):
    patches = [_patch(i, 0.1 * i) for i in range(n)]
    manifest = split_dataset(manifest_from_patches(patches, {"source": "unit"}), seed=0)
    patches = apply_split(patches, manifest)
    write_store(manifest, patches, tmp_path / "store")
    return manifest, patches, tmp_path / "store"


def test_store_round_trip(tmp_path):
    manifest, patches, d = _store(tmp_path)
    back_manifest, back = read_store(d)
    assert back_manifest.to_dict() == manifest.to_dict()
    for a, b in zip(sorted(patches, key=lambda p: p.patch_id), back):
        assert a.patch_id == b.patch_id and a.split_tag == b.split_tag
        assert np.array_equal(a.channels, b.channels) and np.array_equal(a.label, b.label)
        assert a.window.grid == b.window.grid and a.sensing_date == b.sensing_date
    _, train = read_store(d, "train")
    assert len(train) == manifest.counts["train"] == 3
    X, y = stack_patches(train)
    assert X.shape == (3, 3, 128, 128) and y.shape == (3, 128, 128)


def test_store_byte_identical_rewrite(tmp_path):
    manifest, patches, d = _store(tmp_path)
    write_store(manifest, patches, tmp_path / "again")
    files = sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file())
    for rel in files:
        assert (d / rel).read_bytes() == (tmp_path / "again" / rel).read_bytes(), rel


def test_store_count_mismatch_is_corrupt(tmp_path):
    _, _, d = _store(tmp_path)
    body = json.loads((d / "manifest.json").read_text())
    body["counts"]["train"] += 1
    (d / "manifest.json").write_text(json.dumps(body))
    with pytest.raises(CorruptStore):
        read_manifest(d)


def test_store_tampered_patch_is_corrupt(tmp_path):
    manifest, _, d = _store(tmp_path)
    victim = d / "patches" / f"{manifest.records[0].patch_id}_label.tif"
    victim.write_bytes(victim.read_bytes()[:-10] + b"\0" * 10)
    with pytest.raises(CorruptStore):
        read_store(d)


def test_store_missing_file_or_manifest(tmp_path):
    manifest, _, d = _store(tmp_path)
    (d / "patches" / f"{manifest.records[1].patch_id}.tif").unlink()
    with pytest.raises(CorruptStore):
        read_store(d)
    with pytest.raises(CorruptStore):
        read_store(tmp_path / "nowhere")


def test_synthetic_no_burns():
    comp, polys = generate_synthetic_scene(SyntheticSceneSpec(size=128, n_burns=0, seed=1))
    assert polys == []
    (p,), _ = label_composite(comp, polys)
    assert p.label.sum() == 0


def test_synthetic_full_extent_burn():
    spec = SyntheticSceneSpec(size=128, n_burns=1, seed=1, radius_range=(1000, 1000))
    comp, polys = generate_synthetic_scene(spec)
    (p,), _ = label_composite(comp, polys)
    assert p.label.all()
    swir_minus_nir = comp.channels[2] - comp.channels[0]
    assert abs(float(swir_minus_nir.mean()) - (0.2 - 0.3 + 0.5)) < 0.01


def test_synthetic_deterministic_and_in_window():
    spec = SyntheticSceneSpec(size=256, n_burns=8, seed=7)
    (a, pa), (b, pb) = generate_synthetic_scene(spec), generate_synthetic_scene(spec)
    assert a.channels.tobytes() == b.channels.tobytes() and pa == pb
    assert all(0 <= (spec.sensing_date - p.fire_date).days <= 90 for p in pa)
    assert a.channels.min() >= 0 and a.channels.max() <= 1


def test_synthetic_labels_match_signature(small_scene):
    comp, polys = small_scene
    burned = rasterize_polygons(polys, comp.grid).data.astype(bool)
    assert burned.any() and (~burned).any()
    diff = comp.channels[2] - comp.channels[0]
    assert diff[burned].mean() - diff[~burned].mean() == pytest.approx(0.5, abs=0.02)


def test_coarse_reference():
    g = RasterGrid.north_up(CRS, 0, 0, 20, 50, 50)
    data = np.zeros((50, 50), np.uint8)
    data[:25, :25] = 1
    data[25:, 25:40] = 1
    ref = coarse_reference(BinaryMask(g, data))
    assert ref.grid.pixel_width == 500 and ref.grid.shape == (2, 2)
    assert ref.data.tolist() == [[1, 0], [0, 1]]
