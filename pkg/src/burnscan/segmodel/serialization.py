"""Portable weight container.

Layout: ``MAGIC | uint64 little-endian header length | JSON header | tensor blob``.
The header carries the format version, the model config, the tensor table
(name, dtype, shape, offset) and a SHA-256 of the blob.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CorruptFile, VersionMismatch
from .config import ModelConfig
from .estimator import BurnedAreaSegmenter

MAGIC = b"BURNSCAN-WEIGHTS\x00"
FORMAT_VERSION = 1


def export_weights(model: BurnedAreaSegmenter, path) -> Path:
    path = Path(path)
    state = model.network_.state_dict()
    table, chunks, offset = [], [], 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        table.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.get_config().to_dict(),
        "threshold": model.threshold,
        "tensors": table,
        "blob_bytes": len(blob),
        "checksum": hashlib.sha256(blob).hexdigest(),
        "history": getattr(model, "history_", []),
        "best_epoch": getattr(model, "best_epoch_", None),
    }
    head = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<Q", len(head)) + head + blob)
    return path


def _read_header(raw: bytes, path):
    if not raw.startswith(MAGIC):
        raise CorruptFile(f"{path} is not a burnscan weight file")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CorruptFile(f"{path} is truncated")
    (n,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    try:
        header = json.loads(raw[pos : pos + n])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CorruptFile(f"{path}: unreadable header") from None
    return header, raw[pos + n :]


def import_weights(path, **kwargs) -> BurnedAreaSegmenter:
    """Rebuild a fitted :class:`BurnedAreaSegmenter` from an exported file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptFile(f"cannot read {path}: {exc}") from None
    header, blob = _read_header(raw, path)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    if len(blob) != header.get("blob_bytes") or hashlib.sha256(blob).hexdigest() != header.get("checksum"):
        raise CorruptFile(f"{path}: parameter blob is truncated or corrupted")

    config = ModelConfig.from_dict(header["config"])
    model = BurnedAreaSegmenter.from_config(config, threshold=header.get("threshold", 0.5), **kwargs)
    model.build()
    state = {}
    for entry in header["tensors"]:
        chunk = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    try:
        model.network_.load_state_dict(state)
    except RuntimeError as exc:
        raise CorruptFile(f"{path}: parameters do not fit the declared config ({exc})") from None
    model.network_.eval()
    model.history_ = header.get("history", [])
    model.best_epoch_ = header.get("best_epoch")
    return model
