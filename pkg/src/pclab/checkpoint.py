"""Named-tensor checkpoint container.

Layout::

    b"PCLABCK1"                      8-byte magic
    uint64 little-endian             length of the JSON header in bytes
    JSON header (UTF-8)              {"format": "pclab-checkpoint", "version": 1,
                                      "meta": {...},
                                      "tensors": [{"name", "dtype", "shape",
                                                   "offset", "nbytes"}, ...]}
    payload                          raw little-endian tensor bytes; offsets are
                                     relative to the payload start

Dtypes are numpy dtype strings with explicit byte order (``"<f4"``).
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"PCLABCK1"
VERSION = 1


def write_tensors(path, tensors: dict, meta=None):
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        a = np.asarray(tensors[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(a).tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format": "pclab-checkpoint", "version": VERSION,
                         "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def read_tensors(path):
    """Return ``(tensors, meta)``."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(buf) < 16:
        raise FormatError(f"{path}: truncated header length at offset 8")
    n, = struct.unpack_from("<Q", buf, 8)
    try:
        header = json.loads(buf[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable JSON header at offset 16: {e}") from None
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")
    base = 16 + n
    out = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(buf):
            raise FormatError(f"{path}: tensor {e['name']} truncated at offset {start}")
        a = np.frombuffer(buf, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                          offset=start).reshape(e["shape"])
        out[e["name"]] = a.copy()
    return out, header.get("meta", {})


def save_checkpoint(net, path, meta=None):
    write_tensors(path, net.state_arrays(), meta)


def load_checkpoint(net, path):
    """Copy stored arrays into ``net`` in place; names and shapes must match."""
    tensors, meta = read_tensors(path)
    target = net.state_arrays()
    missing = set(target) ^ set(tensors)
    if missing:
        raise FormatError(f"{path}: tensor names differ from the network: {sorted(missing)}")
    for k, dst in target.items():
        src = tensors[k]
        if src.shape != dst.shape:
            raise FormatError(f"{path}: {k} has shape {src.shape}, network expects {dst.shape}")
        dst[...] = src
    return meta
