"""Flat binary checkpoint container.

Byte layout (all integers little-endian):

    bytes 0..7    magic b"SCNET001"
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON: {"meta": {...},
                               "arrays": {name: {"shape": [...], "offset": n}}}
    data          the arrays as raw little-endian float64, back to back,
                  offsets measured from the start of the data section

Arrays are written sorted by name, so a container's bytes are a pure
function of its contents.  ``meta`` holds JSON-serialisable training state
(step counter, schedule state, rng states).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"SCNET001"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    index = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        # tobytes() serialises in C order whatever the layout, and asarray
        # keeps 0-d shapes intact where ascontiguousarray would promote them
        arr = np.asarray(arrays[name], dtype="<f8")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        raw = arr.tobytes()
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": index}).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ContractError(f"{path} is not a checkpoint container (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    data = raw[16 + header_len:]
    arrays = {}
    for name, entry in header["arrays"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start)
        arrays[name] = arr.reshape(shape).astype(np.float64)
    return arrays, header["meta"]
