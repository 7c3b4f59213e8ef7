"""Self-describing checkpoint container with bit-exact tensor round trips.

A checkpoint is one JSON document holding a format version, arbitrary
config dictionaries, and a list of named tensors.  Each tensor stores
its shape plus the raw little-endian float64 buffer as base64, so
save/load reproduces every bit.  Files are written atomically.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

FORMAT_NAME = "tepinn-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


def _encode(arr: np.ndarray) -> dict:
    buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(buf).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    buf = base64.b64decode(entry["data"])
    arr = np.frombuffer(buf, dtype="<f8").astype(np.float64)
    return arr.reshape(entry["shape"])


def save(path: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write tensors plus JSON-serializable metadata to ``path`` atomically."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta,
        "tensors": {name: _encode(arr) for name, arr in tensors.items()},
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    os.replace(tmp, path)


def load(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (tensors, meta)."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"not a valid checkpoint file: {e}") from e
    if doc.get("format") != FORMAT_NAME:
        raise CheckpointError(f"unrecognized container format {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {doc.get('version')!r} not supported (expected {FORMAT_VERSION})"
        )
    tensors = {name: _decode(entry) for name, entry in doc["tensors"].items()}
    return tensors, doc["meta"]
