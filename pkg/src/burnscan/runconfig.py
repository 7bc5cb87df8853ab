"""TOML run configuration shared by the CLI subcommands.

Top-level keys act as defaults for any subcommand flag of the same name
(dashes become underscores); a table named after a subcommand, e.g.
``[extract]``, overrides them for that subcommand only. The ``[model]`` table
holds :class:`~burnscan.segmodel.ModelConfig` fields. Command-line flags
always win.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DATA_ROOT_ENV = "BURNSCAN_DATA_ROOT"
SUBCOMMANDS = (
    "catalog", "composite", "extract", "train", "eval", "predict",
    "infer", "series", "compare", "synth", "plot",
)
PATH_KEYS = {
    "root", "catalog", "composites", "labels", "store", "model", "composite",
    "mosaics", "mosaic", "districts", "region", "reference", "truth", "prediction",
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    source: Path | None = None

    def for_command(self, command: str) -> dict:
        merged = dict(self.values)
        merged.update(self.sections.get(command, {}))
        return merged

    def validate(self, command: str | None = None, keys=None):
        """Check numeric ranges and that referenced input paths exist.

        ``keys`` limits the check to the options a subcommand actually uses.
        """
        values = self.for_command(command) if command else self.values
        if keys is not None:
            values = {k: v for k, v in values.items() if k in keys}
        threshold = values.get("threshold")
        if threshold is not None and not 0.0 <= float(threshold) <= 1.0:
            raise InvalidConfig(f"threshold must be in [0, 1], got {threshold}")
        window = values.get("window_days")
        if window is not None and int(window) < 1:
            raise InvalidConfig(f"window_days must be >= 1, got {window}")
        stride = values.get("stride")
        if stride is not None and int(stride) < 1:
            raise InvalidConfig(f"stride must be >= 1, got {stride}")
        base = self.source.parent if self.source else Path.cwd()
        for key in sorted(PATH_KEYS & set(values)):
            path = resolve_path(values[key], base)
            if not path.exists():
                raise InvalidConfig(f"config key {key!r} points to missing path {path}")
        return self

    def digest(self) -> str:
        body = {"values": self.values, "model": self.model, "sections": self.sections}
        return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()


def resolve_path(value, base: Path | None = None) -> Path:
    path = Path(value).expanduser()
    if path.is_absolute():
        return path
    base = base or Path.cwd()
    if (base / path).exists():
        return base / path
    root = os.environ.get(DATA_ROOT_ENV)
    if root and (Path(root) / path).exists():
        return Path(root) / path
    return base / path


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise InvalidConfig(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    model = doc.pop("model", {})
    sections = {k: doc.pop(k) for k in list(doc) if k in SUBCOMMANDS and isinstance(doc[k], dict)}
    values = {k.replace("-", "_"): v for k, v in doc.items()}
    cfg = RunConfig(values, model, sections, path)
    # relative paths in the file are relative to the file itself
    base = path.parent
    for table in (cfg.values, *cfg.sections.values()):
        for key in PATH_KEYS & set(table):
            if isinstance(table[key], str):
                table[key] = str(resolve_path(table[key], base))
    return cfg
