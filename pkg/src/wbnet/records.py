"""Minimal binary array records ("WBN1") and JSON manifests.

Layout, little-endian throughout::

    magic    4 bytes  b"WBN1"
    dtype    4 bytes  b"f32\\0" | b"f64\\0" | b"c64\\0" | b"c128"
    rank     uint32
    dims     rank x uint64
    payload  raw values; complex arrays are written as a real plane
             followed by an imaginary plane
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WBN1"

_TAGS = {
    b"f32\0": (np.dtype("<f4"), False),
    b"f64\0": (np.dtype("<f8"), False),
    b"c64\0": (np.dtype("<f4"), True),
    b"c128": (np.dtype("<f8"), True),
}
_BY_DTYPE = {
    np.dtype(np.float32): b"f32\0",
    np.dtype(np.float64): b"f64\0",
    np.dtype(np.complex64): b"c64\0",
    np.dtype(np.complex128): b"c128",
}


class RecordError(ValueError):
    """Malformed or truncated record."""


def encode_record(array) -> bytes:
    a = np.asarray(array)
    try:
        tag = _BY_DTYPE[a.dtype]
    except KeyError:
        raise RecordError(f"unsupported dtype {a.dtype}") from None
    plane, is_complex = _TAGS[tag]
    header = MAGIC + tag + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    if is_complex:
        payload = np.stack([a.real, a.imag]).astype(plane).tobytes()
    else:
        payload = a.astype(plane).tobytes()
    return header + payload


def decode_record(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise RecordError("bad magic")
    tag = buf[4:8]
    if tag not in _TAGS:
        raise RecordError(f"unknown dtype tag {tag!r}")
    plane, is_complex = _TAGS[tag]
    (rank,) = struct.unpack("<I", buf[8:12])
    end = 12 + 8 * rank
    if len(buf) < end:
        raise RecordError("truncated header")
    dims = struct.unpack(f"<{rank}Q", buf[12:end])
    count = int(np.prod(dims, dtype=np.int64)) * (2 if is_complex else 1)
    expected = end + count * plane.itemsize
    if len(buf) != expected:
        raise RecordError(f"size mismatch: expected {expected} bytes, found {len(buf)}")
    flat = np.frombuffer(buf, dtype=plane, count=count, offset=end)
    if is_complex:
        re, im = flat.reshape(2, *dims)
        out = np.empty(dims, dtype=np.complex64 if plane.itemsize == 4 else np.complex128)
        out.real, out.imag = re, im
        return out
    return flat.reshape(dims).astype(plane.newbyteorder("="))


def write_record(path, array) -> None:
    Path(path).write_bytes(encode_record(array))


def read_record(path) -> np.ndarray:
    return decode_record(Path(path).read_bytes())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
