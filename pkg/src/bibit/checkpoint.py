"""Flat ``name -> float64 array`` checkpoint container.

Layout (all integers little-endian)::

    offset 0   4 bytes  magic b"BIBT"
    offset 4   u32      format version (1)
    offset 8   u64      header length H in bytes
    offset 16  H bytes  UTF-8 JSON header
    then       data blob: tensors back to back, little-endian float64

The header is ``{"tensors": {name: {"shape": [...], "dtype": "<f8",
"offset": o, "nbytes": n}}, "meta": {...}}`` with ``offset`` relative to the
start of the data blob. Keys are written in sorted order so identical
contents give identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DomainError

MAGIC = b"BIBT"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries[name] = {"shape": list(arr.shape), "dtype": "<f8", "offset": offset, "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)``. Raises DomainError on a malformed file."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise DomainError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise DomainError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DomainError(f"{path}: corrupt header ({exc})") from None
    data = memoryview(raw)[start:]
    tensors = {}
    for name, e in header["tensors"].items():
        if e["dtype"] != "<f8" or e["offset"] + e["nbytes"] > len(data):
            raise DomainError(f"{path}: bad entry for {name!r}")
        arr = np.frombuffer(data[e["offset"]: e["offset"] + e["nbytes"]], dtype="<f8")
        tensors[name] = arr.reshape(e["shape"]).astype(np.float64)
    return tensors, header.get("meta", {})


def save_model(path: str | Path, model, extra: dict | None = None) -> None:
    meta = {"config": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    save(path, model.state_dict(), meta)


def load_model(path: str | Path):
    from .model import Transformer, TransformerConfig

    tensors, meta = load(path)
    if "config" not in meta:
        raise DomainError(f"{path}: checkpoint has no model config")
    return Transformer.from_state(TransformerConfig.from_dict(meta["config"]), tensors), meta
