"""Self-describing binary container.

Layout::

    MAGIC b"\\n"                 format tag, e.g. b"DNILM1" or b"DNILM-CKPT-1"
    uint64 little-endian         length of the JSON header in bytes
    JSON header (utf-8)          {"kind", "meta", "arrays": [{name, dtype, shape, offset}]}
    array payload                C-order little-endian blobs, offsets relative to payload start

The header is written with sorted keys so identical content gives identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"DNILM1"
CHECKPOINT_MAGIC = b"DNILM-CKPT-1"


class FormatError(ValueError):
    pass


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray],
                    magic: bytes = DATASET_MAGIC) -> None:
    table, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        blob = arr.astype(dt, copy=False).tobytes()
        table.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": table},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic: bytes = DATASET_MAGIC, kind: str | None = None):
    """Return ``(kind, meta, arrays)``; raises :class:`FormatError` on mismatch."""
    data = Path(path).read_bytes()
    tag = magic + b"\n"
    if not data.startswith(tag):
        raise FormatError(f"{path}: missing {magic.decode()} header")
    pos = len(tag)
    try:
        (hlen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        header = json.loads(data[pos:pos + hlen])
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    pos += hlen
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"{path}: expected {kind!r} container, found {header['kind']!r}")
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = pos + entry["offset"]
        if start + count * dt.itemsize > len(data):
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["kind"], header["meta"], arrays
