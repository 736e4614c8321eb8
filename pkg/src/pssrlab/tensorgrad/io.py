"""PSSRW weights file: little-endian, lossless float64 tensors.

Layout::

    b"PSSRW"  u32 version  u32 count
    repeated count times:
        u32 name_len  name (UTF-8)  u32 rank  u32[rank] extents  f64[prod] values
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PSSRW"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def save_weights(path, tensors):
    """Write ``tensors`` (name -> array or Tensor), preserving insertion order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr), dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_weights(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:5] != MAGIC:
        raise WeightsFormatError("bad magic at byte 0")
    pos = 5

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise WeightsFormatError(f"truncated file at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported version {version} at byte 5")
    out = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(buf):
            raise WeightsFormatError(f"truncated name at byte {pos}")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        nbytes = 8 * n
        if pos + nbytes > len(buf):
            raise WeightsFormatError(f"truncated values for {name!r} at byte {pos}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(buf):
        raise WeightsFormatError(f"trailing data at byte {pos}")
    return out
