"""Deterministic array checkpoint format.

File layout::

    <schema string>\\n
    <8-byte little-endian header length N>
    <N bytes UTF-8 JSON header: {"arrays": [{"name", "shape", "dtype"}...], "meta": {...}}>
    <raw little-endian C-order bytes of each array, in header order>

No timestamps are written, so identical inputs give identical bytes, and
float64 values round-trip bit-exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, schema: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(arrays)
    entries = []
    blobs = []
    for name in names:
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<") else a.dtype
        a = a.astype(dt, copy=False)
        entries.append({"name": name, "shape": list(a.shape), "dtype": a.dtype.str})
        blobs.append(a.tobytes(order="C"))
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(schema.encode() + b"\n")
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def load_arrays(path: str | Path, schema: str) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    found = raw[:nl].decode(errors="replace") if nl >= 0 else ""
    if found != schema:
        raise CheckpointError(f"{path}: expected schema {schema!r}, found {found!r}")
    off = nl + 1
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off:off + hlen])
    off += hlen
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"], dtype=np.int64)) * dt.itemsize
        arrays[e["name"]] = np.frombuffer(raw[off:off + n], dtype=dt).reshape(e["shape"]).copy()
        off += n
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return arrays, header["meta"]
