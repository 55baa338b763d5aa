"""Binary array container.

Layout (all integers little-endian)::

    magic        8 bytes   b"SSYNARR1"
    dtype tag    4 bytes   ascii, NUL padded: f8, f4, i8, i4, u1
    ndim         uint32
    shape        ndim x uint64
    meta length  uint32
    meta         UTF-8 JSON (sorted keys), may be empty
    data         row-major little-endian elements
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MissingInputError, StyleSynthError

MAGIC = b"SSYNARR1"

_TAGS = {
    "f8": np.dtype("<f8"),
    "f4": np.dtype("<f4"),
    "i8": np.dtype("<i8"),
    "i4": np.dtype("<i4"),
    "u1": np.dtype("u1"),
}


def _tag_for(dtype: np.dtype) -> str:
    for tag, dt in _TAGS.items():
        if np.dtype(dtype).newbyteorder("<") == dt or np.dtype(dtype) == dt:
            return tag
    raise StyleSynthError(f"unsupported dtype {dtype}")


def dumps(array, meta: dict | None = None) -> bytes:
    arr = np.asarray(array)
    tag = _tag_for(arr.dtype)
    arr = np.asarray(arr, dtype=_TAGS[tag], order="C")  # keeps 0-d shape, unlike ascontiguousarray
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    header = [
        MAGIC,
        tag.encode().ljust(4, b"\0"),
        struct.pack("<I", arr.ndim),
        struct.pack(f"<{arr.ndim}Q", *arr.shape),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
    ]
    return b"".join(header) + arr.tobytes(order="C")


def loads(blob: bytes) -> tuple[np.ndarray, dict]:
    if blob[:8] != MAGIC:
        raise StyleSynthError("not an array container (bad magic)")
    pos = 8
    tag = blob[pos:pos + 4].rstrip(b"\0").decode()
    pos += 4
    if tag not in _TAGS:
        raise StyleSynthError(f"unknown dtype tag {tag!r}")
    (ndim,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
    pos += 8 * ndim
    (meta_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    meta = json.loads(blob[pos:pos + meta_len].decode()) if meta_len else {}
    pos += meta_len
    dtype = _TAGS[tag]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = count * dtype.itemsize
    if len(blob) - pos != expected:
        raise StyleSynthError(
            f"truncated array payload: expected {expected} bytes, got {len(blob) - pos}"
        )
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(shape)
    return data.copy(), meta


def save(path, array, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(array, meta))
    return path


def load(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError("array container not found", path=str(path))
    try:
        return loads(path.read_bytes())
    except StyleSynthError as exc:
        raise StyleSynthError(str(exc), path=str(path)) from exc
