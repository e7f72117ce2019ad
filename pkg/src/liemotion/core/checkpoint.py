"""Byte-stable checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"LMCKPT\\x00\\x01"
    version    u32
    meta_len   u64, then meta_len bytes of UTF-8 JSON (sorted keys)
    count      u32
    count x    name_len u16, name (UTF-8), ndim u8, dims u32 x ndim,
               data float64 '<f8' row-major

Tensors are written in sorted name order, so identical contents always give
identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LMCKPT\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def encode(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    m = canonical_json(meta)
    out.append(struct.pack("<Q", len(m)))
    out.append(m)
    out.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = take("<Q")
    meta = json.loads(buf[pos:pos + mlen].decode())
    pos += mlen
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(buf):
            raise CheckpointError("truncated checkpoint")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return tensors, meta


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    Path(path).write_bytes(encode(tensors, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
