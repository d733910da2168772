"""Single-file checkpoint format.

Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON
manifest, then one contiguous payload of little-endian 32-bit floats.
The manifest lists tensor names, shapes, and byte offsets into the
payload, plus a free-form `meta` object (step counter, momentum-schedule
product, dims, vocabulary, resolved config).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from vground.errors import DataError

MAGIC = b"VGCHKPT1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = arrays[name]
        nbytes = int(np.prod(arr.shape, dtype=np.int64)) * 4
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    try:
        manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint manifest: {e}") from e
    payload = blob[16 + mlen:]
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=start).reshape(shape).copy()
    return arrays, manifest["meta"]
