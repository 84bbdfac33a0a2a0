"""Checkpoint files.

Layout (little-endian)::

    b"TFCK" | version u32 | seed u64 | meta_len u32 | meta (UTF-8 JSON)
    | n_params u32
    | n_params x ( name_len u16 | name | ndim u8 | ndim x u32 | values f32 )
    | has_state u8
    | [ epoch u32 | step u64 | n_params x ( m f64 values | v f64 values ) ]

Parameters are exported at 32-bit; optimizer moments keep 64-bit so a
resumed run continues from the exact optimizer state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"TFCK"
VERSION = 1
_HEAD = struct.Struct("<4sIQI")


class CheckpointError(ValueError):
    pass


@dataclass
class OptimizerState:
    epoch: int
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


@dataclass
class Checkpoint:
    seed: int
    meta: dict
    params: dict[str, np.ndarray]
    state: Optional[OptimizerState] = None
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.names:
            self.names = list(self.params)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts = [_HEAD.pack(MAGIC, VERSION, ckpt.seed, len(meta)), meta, struct.pack("<I", len(ckpt.names))]
    for name in ckpt.names:
        arr = np.asarray(ckpt.params[name])
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    if ckpt.state is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<IQ", ckpt.state.epoch, ckpt.state.step))
        for name in ckpt.names:
            parts.append(np.asarray(ckpt.state.m[name]).astype("<f8").tobytes())
            parts.append(np.asarray(ckpt.state.v[name]).astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    r = _Reader(data)
    _, version, seed, meta_len = r.unpack(_HEAD.format)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n_params,) = r.unpack("<I")
    names, params, shapes = [], {}, {}
    for _ in range(n_params):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        names.append(name)
        shapes[name] = shape
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        epoch, step = r.unpack("<IQ")
        m, v = {}, {}
        for name in names:
            size = params[name].size
            m[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shapes[name]).copy()
            v[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shapes[name]).copy()
        state = OptimizerState(epoch, step, m, v)
    if r.off != len(data):
        raise CheckpointError(f"{len(data) - r.off} trailing bytes in checkpoint")
    return Checkpoint(seed=seed, meta=meta, params=params, state=state, names=names)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
