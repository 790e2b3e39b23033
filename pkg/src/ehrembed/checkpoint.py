"""Binary checkpoint format for named tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"ETCK"
    version u32      currently 1
    meta_len u32     length of the UTF-8 JSON metadata blob
    meta     bytes   arbitrary JSON object (model kind, dims, digests, ...)
    n       u32      number of tensors
    table   n records:
        name_len u16, name bytes (UTF-8)
        dtype    u8   0=float32 1=float64 2=int64
        ndim     u8
        dims     ndim x u32
        offset   u64  into the data section
        nbytes   u64
    data    concatenated raw buffers, little-endian

Tensors are written sorted by name, so identical contents give identical
bytes.
"""

import json
import struct

import numpy as np

from .errors import ParseError
from .tensor import Tensor

MAGIC = b"ETCK"
VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    """Write named arrays/Tensors plus a JSON metadata blob."""
    arrays = {}
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if arr.dtype not in _DTYPE_CODES:
            raise ParseError(f"unsupported checkpoint dtype {arr.dtype} for '{name}'")
        arrays[name] = np.ascontiguousarray(arr)

    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    table = bytearray()
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        name_b = name.encode("utf-8")
        table += struct.pack("<H", len(name_b)) + name_b
        table += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<QQ", offset, len(raw))
        blobs.append(raw)
        offset += len(raw)

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        fh.write(bytes(table))
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint; returns (dict name -> ndarray, meta dict)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ParseError("not a checkpoint file (bad magic)", path=str(path))
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path=str(path))
    (meta_len,) = struct.unpack_from("<I", buf, 8)
    pos = 12
    meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    entries = []
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        dtype_code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        offset, nbytes = struct.unpack_from("<QQ", buf, pos)
        pos += 16
        entries.append((name, _CODE_DTYPES[dtype_code], shape, offset, nbytes))
    data_start = pos
    out = {}
    for name, dtype, shape, offset, nbytes in entries:
        raw = buf[data_start + offset:data_start + offset + nbytes]
        out[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    return out, meta
