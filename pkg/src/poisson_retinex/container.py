"""Named-array container used for checkpoints.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"PRXARRS\\0"
    version    u32
    meta_len   u32       length of the UTF-8 JSON metadata block
    meta       meta_len bytes
    n_arrays   u32
    n_arrays times:
        name_len  u16, name (UTF-8)
        dtype_len u8,  dtype (numpy dtype string, e.g. "<f4")
        ndim      u8,  ndim x u64 dims
        nbytes    u64, raw little-endian C-order data
    crc32      u32       over every preceding byte
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"PRXARRS\0"
VERSION = 1
ALLOWED_DTYPES = ("<f4", "<f8", "<i8", "<i4", "|u1")


class ContainerError(ValueError):
    """Malformed, truncated or incompatible container file."""


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, order="C", copy=True)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def write_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = _le(np.asarray(arr))
        dtype = arr.dtype.str
        if dtype not in ALLOWED_DTYPES:
            raise ContainerError(f"array {name!r}: unsupported dtype {dtype}")
        name_b, dtype_b = name.encode("utf-8"), dtype.encode("ascii")
        buf.write(struct.pack("<H", len(name_b)) + name_b)
        buf.write(struct.pack("<B", len(dtype_b)) + dtype_b)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        data = arr.tobytes(order="C")
        buf.write(struct.pack("<Q", len(data)) + data)
    payload = buf.getvalue()
    payload += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError("truncated container")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: not a named-array container (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(len(MAGIC))
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise ContainerError(f"{path}: container version {version}, expected {VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        (n_arrays,) = r.unpack("<I")
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = r.unpack("<H")
            name = r.take(name_len).decode("utf-8")
            (dtype_len,) = r.unpack("<B")
            dtype = r.take(dtype_len).decode("ascii")
            if dtype not in ALLOWED_DTYPES:
                raise ContainerError(f"array {name!r}: unsupported dtype {dtype}")
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q") if ndim else ()
            (nbytes,) = r.unpack("<Q")
            expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
            if nbytes != expected:
                raise ContainerError(f"array {name!r}: {nbytes} bytes for shape {shape}")
            arrays[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt container ({exc})") from exc
    except ContainerError as exc:
        raise ContainerError(f"{path}: corrupt container ({exc})") from exc
    if r.pos != len(body):
        raise ContainerError(f"{path}: corrupt container (trailing bytes)")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ContainerError(f"{path}: corrupt container (checksum mismatch)")
    return arrays, meta
