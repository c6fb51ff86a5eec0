"""Versioned policy checkpoint container.

Layout: magic ``ARCHPOL1`` | uint32-LE header length | JSON header
(kind, tensor names+shapes, arbitrary metadata) | concatenated
little-endian float32 tensor payloads in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"ARCHPOL1"


class DecodeError(ValueError):
    """The blob is not a well-formed checkpoint."""


def encode(kind: str, tensors: dict, meta: dict | None = None) -> bytes:
    """Serialize named tensors (insertion-ordered dict) with metadata."""
    names = list(tensors)
    header = {
        "kind": kind,
        "tensors": [{"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    for n in names:
        out.append(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())
    return b"".join(out)


def decode(blob: bytes):
    """Returns (kind, tensors dict of float64 arrays, meta)."""
    if blob[:8] != MAGIC:
        raise DecodeError("bad magic")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12 : 12 + hlen])
    except (ValueError, UnicodeDecodeError) as e:
        raise DecodeError(f"bad header: {e}") from e
    offset = 12 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        raw = blob[offset : offset + 4 * size]
        if len(raw) != 4 * size:
            raise DecodeError(f"truncated tensor {entry['name']!r}")
        tensors[entry["name"]] = (
            np.frombuffer(raw, dtype="<f4").astype(float).reshape(shape)
        )
        offset += 4 * size
    if offset != len(blob):
        raise DecodeError("trailing bytes after last tensor")
    return header["kind"], tensors, header["meta"]


def save(path, kind: str, tensors: dict, meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(encode(kind, tensors, meta))


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())
