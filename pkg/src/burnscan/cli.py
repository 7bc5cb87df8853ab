"""``burnscan`` command line: one subcommand per pipeline step.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
Every subcommand writes a run record (inputs with hashes, config hash,
declared outputs, library versions) next to its outputs.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BurnscanError, DataError, InvalidConfig
from .runconfig import DATA_ROOT_ENV, RunConfig, load_run_config, resolve_path

log = logging.getLogger("burnscan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- run records ------------------------------------------------------------------


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(path: Path) -> str | None:
    if path.is_file():
        return _file_digest(path)
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(q for q in path.rglob("*") if q.is_file() and q.name != "run_record.json"):
            h.update(str(p.relative_to(path)).encode())
            h.update(_file_digest(p).encode())
        return h.hexdigest()
    return None


def _versions() -> dict:
    import rasterio
    import torch

    return {
        "burnscan": __version__,
        "numpy": np.__version__,
        "torch": torch.__version__,
        "rasterio": rasterio.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
    }


class RunRecord:
    def __init__(self, command: str, options: dict):
        self.command = command
        self.options = {k: v for k, v in options.items() if k not in ("func", "verbose")}
        self.inputs: dict = {}
        self.outputs: list = []

    def add_input(self, path):
        path = Path(path)
        self.inputs[str(path)] = _digest(path)

    def add_output(self, path):
        self.outputs.append(Path(path))

    def write(self, path) -> Path:
        path = Path(path)
        root = path.parent
        options = json.dumps(self.options, sort_keys=True, default=str)
        body = {
            "command": self.command,
            "config_hash": hashlib.sha256(options.encode()).hexdigest(),
            "options": json.loads(options),
            "inputs": self.inputs,
            "outputs": sorted(
                str(p.relative_to(root)) if p.is_relative_to(root) else str(p) for p in self.outputs
            ),
            "versions": _versions(),
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
        return path


def _record_path_for_file(out: Path) -> Path:
    return out.with_name(out.name + ".run.json")


# -- subcommands ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .geo import Polygon, rasterize_polygons, write_polygons
    from .raster_io import write_mask
    from .synthetic import SyntheticSceneSpec, coarse_reference, generate_synthetic_scene, write_granule
    from .transfer import WEST_NILE_SETTLEMENTS

    out = Path(args.out)
    rec = RunRecord("synth", vars(args))
    polygons, masks = [], []
    base_date = dt.date.fromisoformat(args.date)
    for k in range(args.scenes):
        date = base_date.replace(year=base_date.year + k)
        spec = SyntheticSceneSpec(size=args.size, n_burns=args.burns, seed=args.seed + k,
                                  sensing_date=date, window_days=args.window_days)
        comp, polys = generate_synthetic_scene(spec)
        for path in write_granule(comp, out / "granules").values():
            rec.add_output(path)
        polygons.extend(polys)
        masks.append(rasterize_polygons(polys, comp.grid))
    grid = masks[0].grid
    truth = masks[0]
    rec.add_output(write_polygons(polygons, out / "labels.geojson", grid.crs_id))
    rec.add_output(write_mask(out / "truth.tif", truth))
    rec.add_output(write_mask(out / "reference_500m.tif", coarse_reference(truth)))

    # districts: settlement-table district names on a 2x3 grid of blocks inside the scene
    minx, miny, maxx, maxy = grid.bounds
    names = list(dict.fromkeys(d for _, d, _, _ in WEST_NILE_SETTLEMENTS))
    dx, dy = (maxx - minx) / 3, (maxy - miny) / 2
    blocks = {}
    for i, name in enumerate(names):
        r, c = divmod(i, 3)
        blocks[name] = (minx + c * dx, maxy - (r + 1) * dy, minx + (c + 1) * dx, maxy - r * dy)
    districts = [
        Polygon.from_bounds(*blocks[district], attributes={
            "district": district, "settlement": settlement,
            "total_refugees": refugees, "established": established,
        }, crs_id=grid.crs_id)
        for settlement, district, refugees, established in WEST_NILE_SETTLEMENTS
    ]
    rec.add_output(write_polygons(districts, out / "districts.geojson", grid.crs_id))
    region = Polygon.from_bounds(minx, miny, maxx, maxy, {"name": "region"}, grid.crs_id)
    rec.add_output(write_polygons([region], out / "region.geojson", grid.crs_id))
    rec.write(out / "run_record.json")
    print(f"wrote {args.scenes} synthetic scene(s), {len(polygons)} burn polygons to {out}")
    return EXIT_OK


def _catalog_dict(scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "sensing_date": scene.sensing_date.isoformat(),
        "band_paths": {b: str(p) for b, p in scene.band_paths.items()},
        "crs_id": scene.crs_id,
    }


def _scenes_from_catalog(path):
    from .geo import Polygon
    from .ingest import SceneRef

    doc = json.loads(Path(path).read_text())
    return [
        SceneRef(s["scene_id"], dt.date.fromisoformat(s["sensing_date"]),
                 {b: Path(p) for b, p in s["band_paths"].items()}, s["crs_id"],
                 Polygon.from_bounds(0, 0, 1, 1))
        for s in doc["scenes"]
    ]


def _require_root(args):
    root = args.root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(f"--root is required (or set {DATA_ROOT_ENV})")
    return Path(root)


def cmd_catalog(args) -> int:
    from .ingest import build_catalog

    root = _require_root(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        scenes = build_catalog(root)
    skipped = [str(w.message) for w in caught]
    for msg in skipped:
        log.warning(msg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"root": str(root), "scenes": [_catalog_dict(s) for s in scenes], "skipped": skipped}
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    rec = RunRecord("catalog", vars(args))
    rec.add_input(root)
    rec.add_output(out)
    rec.write(_record_path_for_file(out))
    print(f"{len(scenes)} scene(s) catalogued, {len(skipped)} skipped")
    return EXIT_OK


def cmd_composite(args) -> int:
    from .ingest import build_catalog, composite, save_composite

    rec = RunRecord("composite", vars(args))
    if args.catalog:
        scenes = _scenes_from_catalog(args.catalog)
        rec.add_input(args.catalog)
    else:
        root = _require_root(args)
        scenes = build_catalog(root)
        rec.add_input(root)
    out = Path(args.out)

    def work(scene):
        path = save_composite(composite(scene), out)
        return [path, path.with_suffix(".json")]

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        for paths in pool.map(work, scenes):
            for p in paths:
                rec.add_output(p)
    rec.write(out / "run_record.json")
    print(f"wrote {len(scenes)} composite(s) to {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .dataset import (
        filter_burned, label_composite, manifest_from_patches, split_dataset, write_store,
    )
    from .geo import read_polygons
    from .ingest import load_composites

    composites = load_composites(args.composites)
    polygons = read_polygons(args.labels)
    patches, n_windows, n_invalid = [], 0, 0
    for comp in composites:
        labeled, dropped = label_composite(comp, polygons, args.stride, args.window_days)
        n_windows += len(labeled) + dropped
        n_invalid += dropped
        patches.extend(labeled)
    kept = patches if args.keep_unburned else filter_burned(patches, args.min_burned)
    metadata = {
        "tiling": f"regular, stride={args.stride}",
        "window_days": args.window_days,
        "label_window": "fire_date within window_days before or on sensing date",
        "min_burned_fraction": None if args.keep_unburned else args.min_burned,
        "n_windows": n_windows,
        "n_dropped_invalid": n_invalid,
        "n_dropped_unburned": len(patches) - len(kept),
    }
    manifest = split_dataset(
        manifest_from_patches(kept, metadata), args.train_ratio, args.split_seed, by=args.split_by
    )
    out = Path(args.out)
    tags = {r.patch_id: r.split_tag for r in manifest.records}
    for p in kept:
        p.split_tag = tags[p.patch_id]
    manifest_path = write_store(manifest, kept, out)
    rec = RunRecord("extract", vars(args))
    rec.add_input(args.composites)
    rec.add_input(args.labels)
    rec.add_output(manifest_path)
    for pid in manifest.ids():
        rec.add_output(out / "patches" / f"{pid}.tif")
        rec.add_output(out / "patches" / f"{pid}_label.tif")
    rec.write(out / "run_record.json")
    c = manifest.counts
    print(f"{n_windows} windows, {len(kept)} patches kept ({c['train']} train / {c['test']} test)")
    return EXIT_OK


def _model_config(args, run_config: RunConfig | None):
    from .segmodel import ModelConfig

    values = dict(run_config.model) if run_config else {}
    overrides = {
        "width": args.width, "max_epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.learning_rate, "loss": args.loss, "seed": args.seed,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(values)


def cmd_train(args) -> int:
    from .dataset import read_store, stack_patches
    from .segmodel import BurnedAreaSegmenter, export_weights

    run_config = load_run_config(args.config) if args.config else None
    config = _model_config(args, run_config)
    _, patches = read_store(args.store, split="train")
    if not patches:
        raise DataError(f"store {args.store} has no training patches")
    X, y = stack_patches(patches)
    model = BurnedAreaSegmenter.from_config(config, n_jobs=args.jobs, verbose=args.verbose)
    model.fit(X, y)
    out = export_weights(model, args.out)
    rec = RunRecord("train", {**vars(args), "model_config": config.to_dict()})
    rec.add_input(args.store)
    if args.config:
        rec.add_input(args.config)
    rec.add_output(out)
    rec.write(_record_path_for_file(out))
    best = model.history_[model.best_epoch_ - 1]
    print(f"trained {len(X)} patches, best epoch {model.best_epoch_} holdout IoU {best['val_metric']:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import read_store
    from .metrics import evaluate
    from .segmodel import import_weights

    model = import_weights(args.model, n_jobs=args.jobs)
    split = None if args.split == "all" else args.split
    _, patches = read_store(args.store, split=split)
    report = evaluate(model, patches, args.threshold, domain=args.domain)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rec = RunRecord("eval", vars(args))
    rec.add_input(args.model)
    rec.add_input(args.store)
    rec.add_output(report.write_json(out))
    rec.add_output(report.write_csv(out.with_suffix(".csv")))
    rec.write(_record_path_for_file(out))
    print(report.summary())
    return EXIT_OK


def cmd_predict(args) -> int:
    from .ingest import load_composite
    from .raster_io import write_mask
    from .segmodel import import_weights
    from .transfer import infer_region

    model = import_weights(args.model, n_jobs=args.jobs)
    mosaic = infer_region(model, [load_composite(args.composite)], args.threshold)
    out = write_mask(args.out, mosaic.burned, valid=mosaic.valid.data)
    rec = RunRecord("predict", vars(args))
    rec.add_input(args.model)
    rec.add_input(args.composite)
    rec.add_output(out)
    rec.write(_record_path_for_file(Path(out)))
    print(f"burned fraction {mosaic.burned_fraction:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .ingest import load_composites
    from .segmodel import import_weights
    from .transfer import Period, infer_region, save_mosaic

    model = import_weights(args.model, n_jobs=args.jobs)
    composites = load_composites(args.composites)
    if args.period:
        periods = [Period.parse(p) for p in args.period]
    else:
        periods = [Period.year(y) for y in sorted({c.sensing_date.year for c in composites})]
    out = Path(args.out)
    rec = RunRecord("infer", vars(args))
    rec.add_input(args.model)
    rec.add_input(args.composites)
    for period in periods:
        selected = [c for c in composites if period.contains(c.sensing_date)]
        if not selected:
            log.warning("no composites in period %s", period.label)
            continue
        mosaic = infer_region(model, selected, args.threshold, period, combine=args.combine)
        for p in save_mosaic(mosaic, out / period.label):
            rec.add_output(p)
        print(f"{period.label}: {len(selected)} scene(s), burned fraction {mosaic.burned_fraction:.4f}")
    rec.write(out / "run_record.json")
    return EXIT_OK


def _mosaic_dirs(paths):
    dirs = []
    for p in map(Path, paths):
        if (p / "mosaic.json").exists():
            dirs.append(p)
        else:
            dirs.extend(sorted(q.parent for q in p.glob("*/mosaic.json")))
    if not dirs:
        raise DataError(f"no mosaics found under {', '.join(map(str, paths))}")
    return dirs


def cmd_series(args) -> int:
    from .transfer import build_series, load_mosaic, read_districts, read_region

    dirs = _mosaic_dirs(args.mosaics)
    series = build_series([load_mosaic(d) for d in dirs], read_districts(args.districts),
                          read_region(args.region))
    out = series.write_csv(Path(args.out))
    rec = RunRecord("series", vars(args))
    for d in dirs:
        rec.add_input(d)
    rec.add_input(args.districts)
    rec.add_input(args.region)
    rec.add_output(out)
    rec.write(_record_path_for_file(out))
    print(f"wrote {len(series.rows)} series rows to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .raster_io import read_mask
    from .transfer import compare_reference, load_mosaic

    mosaic = load_mosaic(args.mosaic)
    reference, ref_valid = read_mask(args.reference)
    report = compare_reference(mosaic, reference, ref_valid)
    out = report.write_json(Path(args.out))
    rec = RunRecord("compare", vars(args))
    rec.add_input(args.mosaic)
    rec.add_input(args.reference)
    rec.add_output(out)
    rec.write(_record_path_for_file(out))
    a = report.areas_km2()
    print(f"ours only {a['ours_only']:.2f} km2, reference only {a['reference_only']:.2f} km2, "
          f"both {a['agree_burned']:.2f} km2")
    return EXIT_OK


def _load_plot_mask(path):
    from .raster_io import read_mask

    if path is None:
        return None
    path = Path(path)
    if path.is_dir():
        path = path / "burned.tif"
    return read_mask(path)[0]


def cmd_plot(args) -> int:
    from .ingest import load_composite
    from .plotting import triptych

    comp = load_composite(args.composite)
    channels, grid = comp.channels, comp.grid
    if args.window:
        r, c, size = args.window
        channels = channels[:, r : r + size, c : c + size]
        grid = grid.window(r, c, channels.shape[1], channels.shape[2])
    out = triptych(channels, grid, _load_plot_mask(args.truth), _load_plot_mask(args.prediction),
                   args.out, titles=("NIR / Green / SWIR false color", args.truth_title, "model output"),
                   suptitle=comp.scene_id)
    rec = RunRecord("plot", vars(args))
    for p in (args.composite, args.truth, args.prediction):
        if p:
            rec.add_input(p)
    rec.add_output(out)
    rec.write(_record_path_for_file(Path(out)))
    print(f"wrote {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def _add_globals(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="TOML run configuration")
    parser.add_argument("--jobs", type=int, metavar="N", default=argparse.SUPPRESS if suppress else 1,
                        help="worker / thread cap")
    parser.add_argument("--seed", type=int, metavar="K", default=default, help="global random seed")
    parser.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="burnscan", description="Burned-area mapping pipeline")
    parser.add_argument("--version", action="version", version=f"burnscan {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic scene, labels, districts and reference")
    p.add_argument("--size", type=int, default=1280)
    p.add_argument("--burns", type=int, default=12)
    p.add_argument("--scenes", type=int, default=1, help="one scene per year from --date")
    p.add_argument("--date", default="2016-08-15")
    p.add_argument("--window-days", type=int, default=90)
    p.add_argument("--out", required=True)

    p = add("catalog", cmd_catalog, "list complete Sentinel-2 granules")
    p.add_argument("--root", default=None)
    p.add_argument("--out", required=True)

    p = add("composite", cmd_composite, "build B8A/B03/B12 false-color composites")
    p.add_argument("--root", default=None)
    p.add_argument("--catalog", default=None)
    p.add_argument("--out", required=True)

    p = add("extract", cmd_extract, "extract labeled 128x128 patches into a store")
    p.add_argument("--composites", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=128)
    p.add_argument("--window-days", type=int, default=90)
    p.add_argument("--min-burned", type=float, default=0.0)
    p.add_argument("--keep-unburned", action="store_true")
    p.add_argument("--train-ratio", type=float, default=0.7)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--split-by", choices=("patch", "scene"), default="patch")

    p = add("train", cmd_train, "train the segmentation model")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--loss", choices=("cross-entropy", "dice", "combined"), default=None)

    p = add("eval", cmd_eval, "score a model on a patch store")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--domain", default="source")

    p = add("predict", cmd_predict, "predict a burned mask for one composite")
    p.add_argument("--model", required=True)
    p.add_argument("--composite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("infer", cmd_infer, "mosaic predictions over a region per period")
    p.add_argument("--model", required=True)
    p.add_argument("--composites", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--period", action="append", help="YYYY, YYYY-MM or START/END; repeatable")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--combine", choices=("max", "mean"), default="max")

    p = add("series", cmd_series, "per-district burned-area series with regional control")
    p.add_argument("--mosaics", nargs="+", required=True)
    p.add_argument("--districts", required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--out", required=True)

    p = add("compare", cmd_compare, "compare a mosaic with a coarse reference BA mask")
    p.add_argument("--mosaic", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)

    p = add("plot", cmd_plot, "false-color / reference / model triptych")
    p.add_argument("--composite", required=True)
    p.add_argument("--truth", "--reference", dest="truth", default=None)
    p.add_argument("--truth-title", default="reference")
    p.add_argument("--prediction", default=None)
    p.add_argument("--window", type=int, nargs=3, metavar=("ROW", "COL", "SIZE"))
    p.add_argument("--out", required=True)
    return parser


def _apply_config(parser, argv, args):
    """Re-parse with TOML values as defaults so explicit flags still win."""
    cfg = load_run_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions}
    values = {k: v for k, v in cfg.for_command(args.command).items() if k in dests}
    cfg.validate(args.command, keys=dests)
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _finalize(args):
    if getattr(args, "split_seed", "absent") is None:
        args.split_seed = args.seed if args.seed is not None else 0
    if args.command == "synth" and args.seed is None:
        args.seed = 0
    for name in ("threshold",):
        value = getattr(args, name, None)
        if value is not None and not 0.0 <= value <= 1.0:
            raise InvalidConfig(f"--{name} must be in [0, 1]")
    for name in ("window_days", "stride"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            raise InvalidConfig(f"--{name.replace('_', '-')} must be >= 1")
    for name in ("root", "catalog", "composites", "labels", "store", "model", "composite",
                 "districts", "region", "reference", "truth", "prediction", "mosaic"):
        value = getattr(args, name, None)
        if isinstance(value, str):
            setattr(args, name, str(resolve_path(value)))
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.config:
            args = _apply_config(parser, argv, args)
        args = _finalize(args)
        return args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BurnscanError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
