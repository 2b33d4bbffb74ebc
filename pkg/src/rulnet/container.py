"""Binary array container used for checkpoints and window datasets.

Layout (all integers little-endian)::

    magic     8 bytes   b"RULARR1\\n"
    hlen      uint64    length of the header in bytes
    header    hlen bytes of UTF-8 JSON:
                {"metadata": {...},
                 "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    payload   raw array bytes, C order, concatenated in header order;
              offsets are relative to the start of the payload

Float arrays are stored as ``<f8`` and integer arrays as ``<i8``. The header
is serialized with sorted keys and no timestamps, so equal inputs give
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError

MAGIC = b"RULARR1\n"
_DTYPES = {"f": "<f8", "i": "<i8", "u": "<i8", "b": "<i8"}


def save_arrays(path, arrays: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind not in _DTYPES:
            raise ValidationError(f"array {name!r}: unsupported dtype {arr.dtype}")
        dtype = _DTYPES[arr.dtype.kind]
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append(
            {"name": name, "dtype": dtype, "shape": list(arr.shape),
             "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"metadata": dict(metadata or {}), "arrays": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not an array container")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    base = pos + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValidationError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, header["metadata"]
