"""Square-matricization: fold any tensor into the most square integer matrix.

For ``N`` elements the target is the factor pair ``(n_hat, m_hat)`` with
``n_hat * m_hat == N`` and ``n_hat + m_hat`` minimal. The search walks
down from ``isqrt(N)`` and stops at the first divisor, so ``m_hat`` is the
largest divisor not exceeding the square root and ``n_hat >= m_hat``.

Prime ``N`` gives ``(N, 1)``: no compression is possible in that case and
the factored state is ``O(N)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import ShapeError, numel as _numel, reshape


@dataclass(frozen=True)
class EffectiveShape:
    n_hat: int
    m_hat: int
    original_shape: tuple[int, ...]
    numel: int

    @property
    def matrix_shape(self) -> tuple[int, int]:
        return (self.n_hat, self.m_hat)


def effective_shape(numel: int | Sequence[int]) -> EffectiveShape:
    """Most-square factor pair for ``numel`` elements.

    ``numel`` may also be a tensor shape, in which case it is recorded as the
    original shape.
    """
    if isinstance(numel, (int, np.integer)):
        original = (int(numel),)
        n = int(numel)
    else:
        original = tuple(int(a) for a in numel) or (1,)
        n = _numel(original)
    if n < 1:
        raise ValueError(f"numel must be >= 1, got {n}")
    for i in range(math.isqrt(n), 0, -1):
        if n % i == 0:
            return EffectiveShape(n // i, i, original, n)
    raise AssertionError("unreachable: 1 divides every integer")


def brute_force_effective_shape(numel: int) -> tuple[int, int]:
    """Reference search: score every divisor pair by ``n + m`` and keep the best.

    Every divisor pair has one member at most ``isqrt(numel)``, so scanning
    ``1..isqrt(numel)`` enumerates all pairs. Ties resolve to ``n >= m``.
    """
    if numel < 1:
        raise ValueError(f"numel must be >= 1, got {numel}")
    best = None
    for d in range(1, math.isqrt(numel) + 1):
        if numel % d:
            continue
        pair = (max(d, numel // d), min(d, numel // d))
        if best is None or sum(pair) < sum(best):
            best = pair
    return best


def square_matricize(t: np.ndarray, es: EffectiveShape) -> np.ndarray:
    if t.size != es.numel:
        raise ShapeError(f"tensor has {t.size} elements, effective shape expects {es.numel}")
    return reshape(t, es.matrix_shape)


def unmatricize(mat: np.ndarray, es: EffectiveShape) -> np.ndarray:
    """Inverse of :func:`square_matricize`."""
    return reshape(mat, es.original_shape)
