"""Single-file binary container shared by datasets (``.pwds``) and checkpoints (``.pwck``).

Layout::

    magic        8 bytes   b"PWDS\\x00\\x01\\r\\n" or b"PWCK\\x00\\x01\\r\\n"
    header_len   8 bytes   little-endian uint64
    header       header_len bytes of UTF-8 JSON
    payload      concatenated little-endian float64 arrays, C order

The JSON header holds free-form metadata under ``"meta"`` and an ordered list
``"arrays"`` of ``{"name", "shape", "offset"}`` records; offsets are in bytes
from the start of the payload.  Headers are written with sorted keys and no
whitespace variation, so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"PWDS\x00\x01\r\n"
CHECKPOINT_MAGIC = b"PWCK\x00\x01\r\n"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a file is not a valid container of the expected kind."""


def write(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]):
    records = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        records.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"version": FORMAT_VERSION, "meta": meta, "arrays": records},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise FormatError(f"{path}: not a {magic[:4].decode()} file")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")
    payload = raw[16 + n:]
    arrays = {}
    for rec in header["arrays"]:
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        start = rec["offset"]
        if start + 8 * count > len(payload):
            raise FormatError(f"{path}: truncated array {rec['name']!r}")
        arrays[rec["name"]] = np.frombuffer(payload, dtype="<f8", count=count,
                                            offset=start).reshape(rec["shape"]).astype(np.float64)
    return header["meta"], arrays
