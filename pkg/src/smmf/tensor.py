"""Dense float64 tensor helpers.

Tensors are plain C-ordered ``numpy.ndarray`` objects. The helpers here add
the strict shape checks the optimizers rely on: no broadcasting, reshape
only between equal element counts, reductions only on matrices.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible."""


def as_tensor(data, shape: Sequence[int] | None = None, dtype=DTYPE) -> np.ndarray:
    """Build a C-contiguous tensor from ``data``, optionally reshaped to ``shape``."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    if shape is not None:
        arr = reshape(arr, shape)
    if any(n < 1 for n in arr.shape):
        raise ShapeError(f"axis lengths must be >= 1, got {arr.shape}")
    return arr


def numel(shape: Sequence[int]) -> int:
    return math.prod(int(n) for n in shape)


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    """Row-major relabeling of ``t``; the flat data order is unchanged."""
    new_shape = tuple(int(n) for n in new_shape)
    if any(n < 1 for n in new_shape):
        raise ShapeError(f"axis lengths must be >= 1, got {new_shape}")
    if numel(new_shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) into {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def _check_same(a: np.ndarray, b) -> None:
    if isinstance(b, np.ndarray) and b.ndim > 0 and a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def outer(r: np.ndarray, c: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=DTYPE)
    c = np.asarray(c, dtype=DTYPE)
    if r.ndim != 1 or c.ndim != 1:
        raise ShapeError("outer expects two vectors")
    if r.size == 0 or c.size == 0:
        raise ShapeError("outer of an empty vector")
    return np.outer(r, c)


def add_scaled(x: np.ndarray, y: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Return ``alpha * x + beta * y``."""
    _check_same(x, y)
    return alpha * x + beta * y


def square(a: np.ndarray) -> np.ndarray:
    return np.square(a)


def hadamard(a: np.ndarray, b) -> np.ndarray:
    _check_same(a, b)
    return np.multiply(a, b)


def divide(a: np.ndarray, b) -> np.ndarray:
    _check_same(a, b)
    return np.divide(a, b)


def div_sqrt_eps(a: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    """Elementwise ``a / sqrt(b + eps)``."""
    _check_same(a, b)
    return a / np.sqrt(b + eps)


def _check_matrix(t: np.ndarray) -> None:
    if t.ndim != 2:
        raise ShapeError(f"expected a matrix, got rank {t.ndim}")


def row_sums(t: np.ndarray) -> np.ndarray:
    _check_matrix(t)
    return t.sum(axis=1)


def col_sums(t: np.ndarray) -> np.ndarray:
    _check_matrix(t)
    return t.sum(axis=0)


def total(t: np.ndarray) -> float:
    return float(np.sum(t))
