"""Binary weight file I/O.

Layout (all little-endian):

    magic   4 bytes  b"CVXW"
    u32     format version (1)
    u32     num_classes
    u32     tensor_count
    then per tensor:
        u16     name length
        bytes   name (utf-8)
        u8      ndim
        u32     dims[ndim]
        f32     data, row-major

Weights are stored at 32-bit precision; in-memory parameters are float64.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import Model, build_model

MAGIC = b"CVXW"
VERSION = 1


def payload_bytes(model: Model) -> int:
    """Serialized tensor data size: 4 bytes per parameter."""
    return 4 * sum(a.size for a in model.params.values())


def file_bytes(model: Model) -> int:
    """Exact on-disk size: header plus per-tensor records."""
    total = 4 + 4 + 4 + 4
    for name, arr in model.params.items():
        total += 2 + len(name.encode()) + 1 + 4 * arr.ndim + 4 * arr.size
    return total


def save_weights(model: Model, path: str | Path) -> None:
    """Serialize parameters; the write is atomic (temp file then rename)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<III", VERSION, model.num_classes, len(model.params))
    for name, arr in model.params.items():
        name_b = name.encode()
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(bytes(out))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {field}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, field: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def load_weights(path: str | Path) -> Model:
    """Parse a weight file back into a Model of the stored class count.

    Raises FormatError naming the failing field; never returns a partial model.
    """
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    (num_classes,) = r.unpack("<I", "num_classes")
    if num_classes < 2:
        raise FormatError(f"num_classes {num_classes} out of range")
    (tensor_count,) = r.unpack("<I", "tensor_count")

    model = build_model(num_classes, seed=0)
    if tensor_count != len(model.params):
        raise FormatError(
            f"tensor_count {tensor_count} does not match the {len(model.params)}-tensor stack")

    seen: set[str] = set()
    for _ in range(tensor_count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "tensor name").decode("utf-8", errors="strict")
        if name not in model.params:
            raise FormatError(f"unknown tensor name {name!r}")
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        (ndim,) = r.unpack("<B", f"{name} ndim")
        dims = r.unpack(f"<{ndim}I", f"{name} dims")
        expected = model.params[name].shape
        if tuple(dims) != expected:
            raise FormatError(f"tensor {name} has shape {tuple(dims)}, expected {expected}")
        count = int(np.prod(dims)) if dims else 1
        raw = r.take(4 * count, f"{name} data")
        model.params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return model
