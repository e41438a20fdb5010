"""Writer for the AVFS tensor container format.

The layout is the consumer's on-disk contract, re-stated here so this
package has no code dependency on it: little-endian throughout, magic
bytes "AVFS", a u32 format version, then one record per tensor in sorted
name order. Each record is {u16 name length, name bytes, u8 dtype code,
u8 rank, rank u64 dims, raw row-major values}. Dtype codes: 1 is
little-endian float32, 2 float64, 3 uint8. Equal content always produces
identical bytes, which makes checksums meaningful.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AVFS"
FORMAT_VERSION = 1

_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
}


def write_tensor_container(path, tensors: dict) -> Path:
    """Write named arrays to one AVFS file; returns the path."""
    path = Path(path)
    records = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.kind == "f":
            dtype = np.dtype("<f4") if arr.dtype.itemsize <= 4 else np.dtype("<f8")
        elif arr.dtype.kind in "uib" and arr.dtype.itemsize == 1:
            dtype = np.dtype("u1")
        else:
            raise ValueError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        arr = arr.astype(dtype, copy=False)
        name_b = name.encode("utf-8")
        if not 0 < len(name_b) < 2 ** 16:
            raise ValueError(f"tensor name length out of range: {name!r}")
        head = struct.pack("<H", len(name_b)) + name_b
        head += struct.pack("<BB", _CODES[dtype], arr.ndim)
        head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        records.append(head + arr.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for rec in records:
            fh.write(rec)
    return path


def file_checksum(path) -> str:
    """Hex sha256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
