"""Binary tensor archive.

Layout::

    b"SSMKO1"                      6 bytes magic
    header_len                     uint64, little endian
    header                         UTF-8 JSON, header_len bytes
    payload                        concatenated little-endian tensors

The header maps each tensor name to ``{"dtype": "f32"|"f64", "shape": [...],
"offset": int}`` where ``offset`` counts bytes from the start of the payload.
The reserved key ``"__metadata__"`` holds free-form JSON (for model weights:
``{"model_spec": {...}}``). f32 tensors are promoted to float64 on load.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import ModelSpec
from .errors import ArchiveError

MAGIC = b"SSMKO1"
METADATA_KEY = "__metadata__"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def write_archive(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None, dtype: str = "f64") -> None:
    """Write ``tensors`` (sorted by name) to ``path``."""
    if dtype not in _DTYPES:
        raise ArchiveError(f"unsupported dtype {dtype!r}")
    header: dict = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        if name == METADATA_KEY:
            raise ArchiveError(f"{METADATA_KEY!r} is reserved")
        arr = np.ascontiguousarray(tensors[name], dtype=_DTYPES[dtype])
        raw = arr.tobytes()
        header[name] = {"dtype": dtype, "shape": list(arr.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    if metadata is not None:
        header[METADATA_KEY] = metadata
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for raw in chunks:
            f.write(raw)
    os.replace(tmp, path)


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, metadata)``; tensors are float64."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path}: bad magic bytes")
    start = len(MAGIC) + 8
    if len(data) < start:
        raise ArchiveError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC):start])
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable header: {exc}") from exc
    payload = memoryview(data)[start + hlen:]
    metadata = header.pop(METADATA_KEY, {})
    tensors = {}
    for name, entry in header.items():
        dt = _DTYPES.get(entry.get("dtype"))
        if dt is None:
            raise ArchiveError(f"{path}: tensor {name} has unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        lo = entry["offset"]
        hi = lo + count * dt.itemsize
        if lo < 0 or hi > len(payload):
            raise ArchiveError(f"{path}: tensor {name} exceeds payload")
        arr = np.frombuffer(payload[lo:hi], dtype=dt).reshape(shape)
        tensors[name] = arr.astype(np.float64)
    return tensors, metadata


def save_weights(path, weights, dtype: str = "f64", metadata: dict | None = None) -> None:
    """Store weights; ``metadata`` entries (e.g. a vocabulary) ride along."""
    meta = dict(metadata or {})
    meta["model_spec"] = weights.spec.to_dict()
    write_archive(path, weights.params, meta, dtype=dtype)


def load_model(path):
    """Return ``(weights, metadata)`` from a weight archive."""
    from .model import ModelWeights

    tensors, metadata = read_archive(path)
    if "model_spec" not in metadata:
        raise ArchiveError(f"{path}: archive carries no model_spec metadata")
    return ModelWeights(ModelSpec.from_dict(metadata["model_spec"]), tensors), metadata


def load_weights(path):
    return load_model(path)[0]
