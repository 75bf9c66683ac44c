"""Deterministic single-file container for numpy arrays plus a JSON header.

Checkpoints must be bitwise reproducible for identical inputs, which rules
out zip-based formats that embed timestamps. The layout here is:

    magic line | 8-byte little-endian header length | header JSON | raw arrays

Arrays are written in sorted name order as C-contiguous little-endian bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"twigsim-blob-1\n"


def save_blob(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write `meta` (JSON-serializable) and named arrays to one file."""
    specs = []
    payload = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_blob(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a file written by :func:`save_blob`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a twigsim blob file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return header["meta"], arrays
