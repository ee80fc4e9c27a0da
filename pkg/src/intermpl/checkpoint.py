"""Flat binary container for parameter checkpoints.

Layout, all integers little-endian uint32 unless stated:

    magic    8 bytes  b"NNCKPT01"
    version  u32      currently 1
    meta_len u32      followed by meta_len bytes of UTF-8 JSON metadata
    count    u32      number of tensors
    per tensor:
        name_len u32, name bytes (UTF-8)
        ndim     u32, then ndim dims (u32 each)
        data     float64 little-endian, C order

Round-trips are bit-exact. Metadata carries whatever the caller needs to
rebuild the surrounding objects (model configuration, vocabulary, ...).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .optim import ParamSet, ParamTensor

MAGIC = b"NNCKPT01"
VERSION = 1


def write_checkpoint(path: str | Path, params: ParamSet, metadata: dict[str, Any] | None = None) -> None:
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack("<I", len(meta_bytes)))
    chunks.append(meta_bytes)
    chunks.append(struct.pack("<I", len(params)))
    for t in params:
        name = t.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<I", t.value.ndim))
        chunks.append(struct.pack(f"<{t.value.ndim}I", *t.value.shape))
        chunks.append(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("truncated checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path: str | Path) -> tuple[ParamSet, dict[str, Any]]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    params = ParamSet()
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
        params.add(ParamTensor(name, data.astype(np.float64)))
    if r.pos != len(r.buf):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return params, meta
