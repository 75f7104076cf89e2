"""Flat binary tensor container with a versioned, checksummed layout.

Byte layout (all integers little-endian; documented in README.md):

    magic   4 bytes  b"HQCK"
    version u32      currently 1
    hlen    u32      length of the JSON header blob
    header  hlen     UTF-8 JSON (model config and any run metadata)
    count   u32      number of tensors
    per tensor:
        nlen    u16      name length
        name    nlen     UTF-8
        ndim    u8
        dims    ndim*u64
        payload numel*f64 little-endian, row-major
    crc     u32      zlib.crc32 over every preceding byte

Writes are deterministic for identical inputs (no timestamps), which is what
makes checkpoint files byte-comparable across reruns.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"HQCK"
VERSION = 1


def save(path, tensors: dict[str, np.ndarray], header: dict | None = None) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    hbytes = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(hbytes))
    blob += hbytes
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        nbytes = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        blob += struct.pack("<H", len(nbytes))
        blob += nbytes
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        blob += arr.astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise DataError(f"{path}: checksum mismatch, file is corrupted")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, off) if ndim else ()
        off += 8 * ndim
        numel = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=numel, offset=off).reshape(shape)
        off += 8 * numel
        tensors[name] = arr.astype(np.float64)
    return header, tensors
