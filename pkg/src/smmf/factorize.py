"""Rank-1 non-negative factorization of momentum matrices.

A first-moment matrix ``M`` is stored as two non-negative vectors
``(r, c)`` whose outer product approximates ``|M|``, plus a one-bit sign
map. A second-moment matrix ``V`` is non-negative and stores ``(r, c)``
only. Decompression is ``outer(r, c)`` with negatives restored where the
sign bit is 0.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, ShapeError

PACKED = "packed-1bit"
BYTE = "byte-8bit"
SIGN_MODES = (PACKED, BYTE)

_MODE_CODES = {PACKED: 0, BYTE: 1}
_HEADER = struct.Struct("<IIBB")


class FactorizationError(ValueError):
    pass


@dataclass
class SignBitmap:
    """Elementwise sign record; bit 1 means the element was ``>= 0``.

    Packed mode stores 8 elements per byte in little bit order (element
    ``k`` lives in bit ``k % 8`` of byte ``k // 8``); byte mode stores one
    element per byte.
    """

    rows: int
    cols: int
    bits: np.ndarray
    storage_mode: str = PACKED

    def __post_init__(self):
        if self.storage_mode not in SIGN_MODES:
            raise ValueError(f"unknown sign storage mode {self.storage_mode!r}")
        expected = self.byte_size(self.rows, self.cols, self.storage_mode)
        if self.bits.dtype != np.uint8 or self.bits.size != expected:
            raise ShapeError(f"sign storage must be {expected} uint8 bytes, got {self.bits.size}")

    @staticmethod
    def byte_size(rows: int, cols: int, storage_mode: str = PACKED) -> int:
        n = rows * cols
        return math.ceil(n / 8) if storage_mode == PACKED else n

    @classmethod
    def zeros(cls, rows: int, cols: int, storage_mode: str = PACKED) -> "SignBitmap":
        return cls(rows, cols, np.zeros(cls.byte_size(rows, cols, storage_mode), np.uint8), storage_mode)

    @classmethod
    def from_matrix(cls, m: np.ndarray, storage_mode: str = PACKED) -> "SignBitmap":
        nonneg = (m >= 0).ravel()
        if storage_mode == PACKED:
            bits = np.packbits(nonneg, bitorder="little")
        else:
            bits = nonneg.astype(np.uint8)
        return cls(m.shape[0], m.shape[1], bits, storage_mode)

    def to_bool(self) -> np.ndarray:
        """Boolean ``(rows, cols)`` matrix, True where the element was non-negative."""
        n = self.rows * self.cols
        if self.storage_mode == PACKED:
            flat = np.unpackbits(self.bits, count=n, bitorder="little")
        else:
            flat = self.bits
        return flat.astype(bool).reshape(self.rows, self.cols)

    @property
    def nbytes(self) -> int:
        return int(self.bits.size)


@dataclass
class FactorPair:
    r: np.ndarray
    c: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.r.size, self.c.size)

    def nbytes(self, bpe: int = 8) -> int:
        return (self.r.size + self.c.size) * bpe

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "FactorPair":
        return cls(np.zeros(rows, DTYPE), np.zeros(cols, DTYPE))


@dataclass
class CompressedMomentum:
    factors: FactorPair
    signs: SignBitmap | None = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.factors.shape

    @classmethod
    def zeros(cls, rows: int, cols: int, with_signs: bool, storage_mode: str = PACKED):
        signs = SignBitmap.zeros(rows, cols, storage_mode) if with_signs else None
        return cls(FactorPair.zeros(rows, cols), signs)

    def nbytes(self, bpe: int = 4) -> int:
        """Persistent storage with ``bpe`` bytes per factor entry."""
        n = self.factors.nbytes(bpe)
        if self.signs is not None:
            n += self.signs.nbytes
        return n

    def to_bytes(self) -> bytes:
        """Little-endian dump: header, ``r`` and ``c`` as float64, sign bytes."""
        rows, cols = self.shape
        mode = self.signs.storage_mode if self.signs is not None else PACKED
        parts = [
            _HEADER.pack(rows, cols, _MODE_CODES[mode], int(self.signs is not None)),
            self.factors.r.astype("<f8").tobytes(),
            self.factors.c.astype("<f8").tobytes(),
        ]
        if self.signs is not None:
            parts.append(self.signs.bits.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["CompressedMomentum", int]:
        """Parse one dump starting at ``offset``; returns the value and the end offset."""
        rows, cols, code, has_signs = _HEADER.unpack_from(buf, offset)
        modes = {v: k for k, v in _MODE_CODES.items()}
        if code not in modes:
            raise ValueError(f"bad sign storage code {code}")
        pos = offset + _HEADER.size
        r = np.frombuffer(buf, "<f8", rows, pos).astype(DTYPE)
        pos += 8 * rows
        c = np.frombuffer(buf, "<f8", cols, pos).astype(DTYPE)
        pos += 8 * cols
        signs = None
        if has_signs:
            nb = SignBitmap.byte_size(rows, cols, modes[code])
            bits = np.frombuffer(buf, np.uint8, nb, pos).copy()
            pos += nb
            signs = SignBitmap(rows, cols, bits, modes[code])
        return cls(FactorPair(r, c), signs), pos


def nnmf(a: np.ndarray) -> FactorPair:
    """Row sums and total-normalized column sums of a non-negative matrix.

    An all-zero matrix yields zero vectors (normalization is skipped).
    """
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim != 2:
        raise ShapeError(f"nnmf expects a matrix, got rank {a.ndim}")
    if np.any(a < 0):
        raise FactorizationError("nnmf input has negative entries")
    r = a.sum(axis=1)
    c = a.sum(axis=0)
    scale = c.sum()
    if scale != 0:
        c = c / scale
    return FactorPair(r, c)


def _factorize_nonneg(a: np.ndarray) -> FactorPair:
    # normalize the shorter side; ties normalize r
    r = a.sum(axis=1)
    c = a.sum(axis=0)
    if r.size <= c.size:
        scale = r.sum()
        if scale != 0:
            r /= scale
    else:
        scale = c.sum()
        if scale != 0:
            c /= scale
    return FactorPair(r, c)


def _check_finite(m: np.ndarray) -> None:
    if not np.all(np.isfinite(m)):
        raise FactorizationError("matrix has non-finite entries")


def compress(m: np.ndarray, storage_mode: str = PACKED) -> tuple[FactorPair, SignBitmap]:
    """Factor a signed matrix into ``(r, c)`` over ``|m|`` plus its sign map."""
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"compress expects a matrix, got rank {m.ndim}")
    _check_finite(m)
    return _factorize_nonneg(np.abs(m)), SignBitmap.from_matrix(m, storage_mode)


def compress_nonnegative(v: np.ndarray) -> FactorPair:
    """Factor a non-negative matrix (second moment); no sign map is kept."""
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 2:
        raise ShapeError(f"compress expects a matrix, got rank {v.ndim}")
    _check_finite(v)
    if np.any(v < 0):
        raise FactorizationError("second-moment matrix has negative entries")
    return _factorize_nonneg(v)


def decompress(cm: CompressedMomentum | FactorPair, signs: SignBitmap | None = None) -> np.ndarray:
    """Rebuild the ``(rows, cols)`` matrix; elements with sign bit 0 are negated."""
    if isinstance(cm, CompressedMomentum):
        factors, signs = cm.factors, cm.signs if signs is None else signs
    else:
        factors = cm
    if factors.r.ndim != 1 or factors.c.ndim != 1:
        raise ShapeError("factor vectors must be 1-D")
    out = np.outer(factors.r, factors.c)
    if signs is not None:
        if (signs.rows, signs.cols) != out.shape:
            raise ShapeError(f"sign map {(signs.rows, signs.cols)} does not match factors {out.shape}")
        np.negative(out, out=out, where=~signs.to_bool())
    return out


def compression_error_sum(a: np.ndarray) -> float:
    """Sum of ``outer(nnmf(a)) - a``; zero up to rounding for any non-negative ``a``."""
    a = np.asarray(a, dtype=DTYPE)
    return float(np.sum(decompress(nnmf(a)) - a))
