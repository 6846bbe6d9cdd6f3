"""Versioned checkpoint container.

Layout::

    b"CHEBSEG-CKPT\\n"            magic
    uint32 little-endian          format version
    uint64 little-endian          header length H
    H bytes                       JSON header (sorted keys): config, rng state,
                                  optimizer scalars, tensor table
    raw tensor bytes              little-endian, C order, at the offsets listed

No timestamps are stored, so identical states give identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CHEBSEG-CKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    """Write named arrays plus a JSON-serialisable ``meta`` dict."""
    table = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt, copy=False).tobytes()
        table.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": table}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path):
    """Returns (tensors, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, pos + 4)
    pos += 12
    header = json.loads(blob[pos : pos + hlen])
    base = pos + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return tensors, header["meta"]
