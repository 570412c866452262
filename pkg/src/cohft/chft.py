"""CHFT binary tensor files and multi-entry containers.

Single tensor layout: magic "CHFT", version u16 = 1, dtype u8 (0 = f32,
1 = f64), ndim u8, ndim x u32 extents, then the payload little-endian
row-major.  A container is a sequence of named entries, each written as
u16 name length, the utf-8 name, then a full single-tensor blob.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CHFT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class FormatError(ValueError):
    pass


def _encode(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    head = MAGIC + struct.pack("<HBB", VERSION, _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(arr.dtype.newbyteorder("<")).tobytes()


def _decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("bad magic bytes")
    version, code, ndim = struct.unpack_from("<HBB", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}I", buf, offset + 8)
    dtype = _DTYPES[code]
    start = offset + 8 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    end = start + count * dtype.itemsize
    if end > len(buf):
        raise FormatError("truncated payload")
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("=")), end


def save_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(_encode(np.asarray(arr)))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = _decode(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor payload")
    return arr


def save_container(path, entries):
    """entries: iterable of (name, array) written in the given order."""
    with open(path, "wb") as f:
        for name, arr in entries:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(_encode(np.asarray(arr)))


def load_container(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    out: dict[str, np.ndarray] = {}
    offset = 0
    while offset < len(buf):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset:offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = _decode(buf, offset)
        out[name] = arr
    return out
