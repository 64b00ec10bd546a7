"""Named-tensor container file.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"MTECKPT\\0"
    version    uint32    currently 1
    meta_len   uint32    length of the JSON metadata block
    meta       meta_len bytes of UTF-8 JSON (free-form, e.g. model config)
    count      uint32    number of tensors
    repeated count times:
        name_len  uint16
        name      name_len bytes UTF-8
        ndim      uint8
        shape     ndim x uint64
        values    prod(shape) x float64, row-major
"""

import io
import json
import struct
from collections import OrderedDict

import numpy as np

from mtecache.errors import DataError

MAGIC = b"MTECKPT\x00"
VERSION = 1


def dump_tensors(tensors, meta=None):
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def load_tensors(data):
    """Inverse of :func:`dump_tensors`; returns ``(OrderedDict, meta)``."""
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(bytes(view[pos : pos + meta_len]).decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    out = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + name_len]).decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(view[pos : pos + 8 * n], dtype="<f8").reshape(shape).copy()
        pos += 8 * n
    if pos != len(view):
        raise DataError("trailing bytes after last tensor")
    return out, meta


def save_checkpoint(path, tensors, meta=None):
    from mtecache.io import atomic_write_bytes

    atomic_write_bytes(path, dump_tensors(tensors, meta))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return load_tensors(fh.read())
