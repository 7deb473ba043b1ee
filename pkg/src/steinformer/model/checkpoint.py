"""Single-file weight format.

Layout: ``b"STEIN1"``, a little-endian uint32 byte length, a UTF-8 JSON
manifest ``[{"name", "shape", "offset"}, ...]`` (offsets in bytes from the
start of the payload), then every tensor as raw little-endian float32.
Buffers such as running statistics are stored alongside parameters.
A ``<file>.json`` sidecar carries the config and run metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigError, DataError
from ..tensor_core import Module

MAGIC = b"STEIN1"


def save_weights(model: Module, path, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    manifest, chunks, offset = [], [], 0
    for name, value in model.state_dict().items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    head = json.dumps(manifest).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for c in chunks:
            f.write(c)
    tmp.replace(path)
    if meta is not None:
        sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a STEIN1 checkpoint")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise DataError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    try:
        manifest = json.loads(raw[pos : pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt manifest ({e})") from e
    payload = memoryview(raw)[pos + n :]
    out = {}
    for entry in manifest:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise DataError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        out[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return out


def load_weights(model: Module, path) -> Module:
    state = read_weights(path)
    try:
        model.load_state_dict(state)
    except ConfigError as e:
        raise DataError(f"checkpoint {path} does not fit this model: {e}") from e
    return model


def read_sidecar(path) -> dict:
    p = sidecar(path)
    if not p.exists():
        return {}
    return json.loads(p.read_text())
