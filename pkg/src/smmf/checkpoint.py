"""Binary checkpoints of SMMF optimizer state.

Layout (little-endian)::

    magic   b"SMMFCKPT"
    version u16            (currently 1)
    count   u32            number of layer records
    per layer:
      key_type u8          0 = str, 1 = int
      key_len u16, key utf-8 bytes
      kind    u8           0 = factored, 1 = dense fallback
      step    u64
      ndim    u8, dims u32 * ndim   original parameter shape
      has_m   u8
      factored: [m dump] v dump     (CompressedMomentum.to_bytes)
      dense:    [m float64 * N] v float64 * N
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .factorize import CompressedMomentum
from .matricize import effective_shape
from .optimizers import DenseLayerState, SmmfLayerState

MAGIC = b"SMMFCKPT"
VERSION = 1


def dumps(states: dict) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(states))]
    for key, st in states.items():
        name = str(key).encode()
        parts.append(struct.pack("<BH", isinstance(key, int), len(name)) + name)
        if isinstance(st, SmmfLayerState):
            shape = st.shape.original_shape
            kind = 0
        elif isinstance(st, DenseLayerState):
            shape = st.v.shape
            kind = 1
        else:
            raise TypeError(f"cannot checkpoint state of type {type(st).__name__}")
        parts.append(struct.pack("<BQB", kind, st.step, len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(struct.pack("<B", st.m is not None))
        if kind == 0:
            if st.m is not None:
                parts.append(st.m.to_bytes())
            parts.append(st.v.to_bytes())
        else:
            if st.m is not None:
                parts.append(st.m.astype("<f8").tobytes())
            parts.append(st.v.astype("<f8").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict:
    if buf[:8] != MAGIC:
        raise ValueError("not an SMMF checkpoint")
    version, count = struct.unpack_from("<HI", buf, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 14
    states = {}
    for _ in range(count):
        is_int, klen = struct.unpack_from("<BH", buf, pos)
        pos += 3
        key = buf[pos:pos + klen].decode()
        key = int(key) if is_int else key
        pos += klen
        kind, step, ndim = struct.unpack_from("<BQB", buf, pos)
        pos += 10
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        (has_m,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        if kind == 0:
            m = None
            if has_m:
                m, pos = CompressedMomentum.from_bytes(buf, pos)
            v, pos = CompressedMomentum.from_bytes(buf, pos)
            states[key] = SmmfLayerState(effective_shape(shape), m, v, step)
        else:
            n = math.prod(shape)
            m = None
            if has_m:
                m = np.frombuffer(buf, "<f8", n, pos).reshape(shape).astype(np.float64)
                pos += 8 * n
            v = np.frombuffer(buf, "<f8", n, pos).reshape(shape).astype(np.float64)
            pos += 8 * n
            states[key] = DenseLayerState(m, v, step)
    return states


def save_checkpoint(optimizer, path) -> None:
    Path(path).write_bytes(dumps(optimizer.state))


def load_checkpoint(optimizer, path) -> None:
    """Replace ``optimizer.state`` with the checkpointed states."""
    optimizer.state = loads(Path(path).read_bytes())
