"""Binary container for checkpoints and prepared-sequence caches.

Layout (all integers little-endian):

    magic   b"RSLB"
    version u32
    body:
        meta_len u32, meta JSON (utf-8)
        count    u32
        per entry: name_len u16, name utf-8, dtype u8, ndim u8, dims u32...
        payloads, row-major, concatenated in manifest order
    crc32   u32 over body

Round-trips are byte-exact; a corrupted payload byte fails the checksum.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"RSLB"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class ContainerError(ValueError):
    """Malformed, truncated, or corrupt container file."""


def save_container(path, arrays, meta=None):
    """Write named arrays plus a JSON metadata dict.

    ``arrays`` is an ordered list of (name, ndarray) or a dict.
    """
    if isinstance(arrays, dict):
        arrays = list(arrays.items())
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += struct.pack("<I", len(meta_bytes)) + meta_bytes
    body += struct.pack("<I", len(arrays))
    payloads = bytearray()
    for name, arr in arrays:
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        for dim in arr.shape:
            body += struct.pack("<I", dim)
        payloads += np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes()
    body += payloads
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))


def load_container(path):
    """Read back (arrays: dict[str, ndarray], meta: dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a container file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    body = raw[8:-4]
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ContainerError(f"{path}: checksum mismatch, file corrupt or truncated")

    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(body):
            raise ContainerError(f"{path}: truncated manifest")
        vals = struct.unpack_from(fmt, body, off)
        off += size
        return vals if len(vals) > 1 else vals[0]

    meta_len = take("<I")
    meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    count = take("<I")
    manifest = []
    for _ in range(count):
        name_len = take("<H")
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = take("<BB")
        if code not in _DTYPES:
            raise ContainerError(f"{path}: unknown dtype code {code} for {name!r}")
        shape = tuple(take("<I") for _ in range(ndim))
        manifest.append((name, _DTYPES[code], shape))

    arrays = {}
    for name, dtype, shape in manifest:
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if off + nbytes > len(body):
            raise ContainerError(f"{path}: payload for {name!r} shorter than manifest claims")
        arrays[name] = np.frombuffer(body[off:off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise ContainerError(f"{path}: {len(body) - off} trailing bytes after last payload")
    return arrays, meta
