"""Named-parameter checkpoints.

Layout: ``<path>`` holds little-endian float64 values of every parameter,
concatenated in index order; ``<path>.json`` maps each name to its element
offset and shape, plus free-form metadata.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Parameter


def index_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save(params: Mapping[str, Parameter | np.ndarray], path, meta: dict | None = None) -> None:
    path = Path(path)
    entries = {}
    chunks = []
    offset = 0
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data if isinstance(p, Parameter) else p, dtype="<f8")
        entries[name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(arr.reshape(-1))
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    path.write_bytes(flat.astype("<f8").tobytes())
    doc = {"params": entries, "meta": meta or {}}
    index_path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(name -> array, meta)`` from a checkpoint pair."""
    path = Path(path)
    doc = json.loads(index_path(path).read_text())
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    arrays = {}
    for name, entry in doc["params"].items():
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arrays[name] = flat[start:start + n].reshape(entry["shape"]).astype(np.float64)
    return arrays, doc.get("meta", {})


def load_into(params: Mapping[str, Parameter], path) -> dict:
    """Copy checkpoint values into ``params`` in place; returns the metadata."""
    arrays, meta = read(path)
    missing = sorted(set(params) - set(arrays))
    unexpected = sorted(set(arrays) - set(params))
    if missing or unexpected:
        raise KeyError(f"checkpoint mismatch: missing={missing} unexpected={unexpected}")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} != {p.data.shape}")
        p.data[...] = arrays[name]
    return meta
