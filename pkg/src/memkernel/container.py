"""On-disk formats for LegTensors and tensor families.

Two interchangeable encodings of the same content, a manifest plus a list of
keyed tensors:

JSON::

    {"format": "LTNS1", "manifest": {...},
     "entries": [{"key": [2, 1], "legs": [[3, "out", 2], ...],
                  "data": [[re, im], ...]}, ...]}

Binary (little-endian)::

    b"LTNS1" | u32 manifest_len | manifest (UTF-8 JSON) | u32 count |
    per entry: u32 key_len, i32 key[key_len], u32 num_legs,
               (i32 timestep, u8 role [0=in, 1=out], u32 dim) * num_legs,
               complex128 data[side * side] (row-major)

``data`` is always row-major over the composite space, rows being kets.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DomainError
from .tensornet import IN, OUT, Leg, LegTensor, TensorSet

MAGIC = b"LTNS1"
_ROLE_CODE = {IN: 0, OUT: 1}
_CODE_ROLE = {0: IN, 1: OUT}


def _entry_json(key: tuple, t: LegTensor) -> dict:
    flat = t.matrix.reshape(-1)
    return {
        "key": list(key),
        "legs": [[leg.timestep, leg.role, leg.dim] for leg in t.legs],
        "data": np.stack([flat.real, flat.imag], axis=1).tolist(),
    }


def _entry_from_json(entry: dict) -> tuple[tuple, LegTensor]:
    legs = tuple(Leg(int(t), str(r), int(d)) for t, r, d in entry["legs"])
    side = int(np.prod([leg.dim for leg in legs], dtype=np.int64))
    data = np.asarray(entry["data"], dtype=float).reshape(-1, 2)
    if data.shape[0] != side * side:
        raise DomainError("data length does not match leg header")
    m = (data[:, 0] + 1j * data[:, 1]).reshape(side, side)
    return tuple(entry["key"]), LegTensor(legs, m)


def dumps_json(tensors: TensorSet) -> str:
    doc = {
        "format": MAGIC.decode(),
        "manifest": tensors.meta,
        "entries": [_entry_json(k, t) for k, t in tensors.items()],
    }
    return json.dumps(doc, sort_keys=True)


def loads_json(text: str) -> TensorSet:
    doc = json.loads(text)
    if doc.get("format") != MAGIC.decode():
        raise DomainError("not an LTNS1 JSON document")
    entries = dict(_entry_from_json(e) for e in doc["entries"])
    return TensorSet(entries, doc.get("manifest", {}))


def dumps_binary(tensors: TensorSet) -> bytes:
    manifest = json.dumps(tensors.meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(manifest)), manifest,
             struct.pack("<I", len(tensors))]
    for key, t in tensors.items():
        parts.append(struct.pack(f"<I{len(key)}i", len(key), *key))
        parts.append(struct.pack("<I", len(t.legs)))
        for leg in t.legs:
            parts.append(struct.pack("<iBI", leg.timestep, _ROLE_CODE[leg.role], leg.dim))
        parts.append(np.ascontiguousarray(t.matrix, dtype="<c16").tobytes())
    return b"".join(parts)


def loads_binary(blob: bytes) -> TensorSet:
    if not blob.startswith(MAGIC):
        raise DomainError("missing LTNS1 magic")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    (mlen,) = take("<I")
    manifest = json.loads(blob[pos:pos + mlen].decode())
    pos += mlen
    (count,) = take("<I")
    entries = {}
    for _ in range(count):
        (klen,) = take("<I")
        key = take(f"<{klen}i")
        (nlegs,) = take("<I")
        legs = []
        for _ in range(nlegs):
            t, role, dim = take("<iBI")
            legs.append(Leg(t, _CODE_ROLE[role], dim))
        side = int(np.prod([leg.dim for leg in legs], dtype=np.int64))
        nbytes = side * side * 16
        m = np.frombuffer(blob, dtype="<c16", count=side * side, offset=pos)
        pos += nbytes
        entries[tuple(key)] = LegTensor(tuple(legs), m.reshape(side, side).astype(complex))
    return TensorSet(entries, manifest)


def save(path: str | Path, tensors: TensorSet | LegTensor, fmt: str | None = None) -> Path:
    """Write a tensor family (or a single tensor, key ``()``).

    ``fmt`` is ``"json"`` or ``"binary"``; by default it follows the suffix
    (``.json`` -> JSON, anything else -> binary).
    """
    path = Path(path)
    if isinstance(tensors, LegTensor):
        tensors = TensorSet({(): tensors})
    if fmt is None:
        fmt = "json" if path.suffix == ".json" else "binary"
    if fmt == "json":
        path.write_text(dumps_json(tensors))
    elif fmt == "binary":
        path.write_bytes(dumps_binary(tensors))
    else:
        raise DomainError(f"unknown format {fmt!r}")
    return path


def load(path: str | Path) -> TensorSet:
    """Read either encoding, detected from the leading bytes."""
    blob = Path(path).read_bytes()
    if blob.startswith(MAGIC):
        return loads_binary(blob)
    return loads_json(blob.decode())


def load_tensor(path: str | Path) -> LegTensor:
    ts = load(path)
    if len(ts) != 1:
        raise DomainError(f"expected a single tensor, found {len(ts)}")
    return next(iter(ts.entries.values()))
