"""TSR1 tensor files and their key=value sidecar metadata.

Layout (little-endian): magic ``TSR1``, u8 ndim, ndim x u32 dims, then the
values as row-major f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MalformedHeader

MAGIC = b"TSR1"


def encode_tensor(array) -> bytes:
    a = np.asarray(array)
    if a.ndim > 255:
        raise ValueError("TSR1 supports at most 255 dimensions")
    if any(d > 0xFFFFFFFF for d in a.shape):
        raise ValueError("dimension exceeds u32")
    head = MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    data = bytes(data)
    if len(data) < 5 or data[:4] != MAGIC:
        raise MalformedHeader("not a TSR1 tensor")
    ndim = data[4]
    off = 5 + 4 * ndim
    if len(data) < off:
        raise MalformedHeader("truncated TSR1 dimension list")
    dims = struct.unpack_from(f"<{ndim}I", data, 5)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(data) - off != 4 * count:
        raise MalformedHeader(f"TSR1 body holds {len(data) - off} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)


def save_tensor(path, array, meta=None) -> None:
    path = Path(path)
    path.write_bytes(encode_tensor(array))
    if meta is not None:
        write_meta(meta_path(path), meta)


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def format_kv(items) -> str:
    lines = []
    for k, v in dict(items).items():
        if "=" in str(k) or "\n" in str(k) + str(v):
            raise ValueError(f"cannot encode key/value {k!r}={v!r}")
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MalformedHeader(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_meta(path, meta) -> None:
    Path(path).write_text(format_kv(meta))


def read_meta(path) -> dict:
    return parse_kv(Path(path).read_text())
