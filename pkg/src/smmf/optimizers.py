"""SMMF and baseline optimizers.

Each optimizer keeps one state object per parameter and exposes a uniform
``step`` over a list or dict of ``(weight, grad)`` pairs. The per-layer
update rules are also available as plain functions (``smmf_step``,
``adam_step`` ...) operating on an explicit state.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, replace

import numpy as np

from .factorize import (
    PACKED,
    SIGN_MODES,
    CompressedMomentum,
    compress,
    compress_nonnegative,
    decompress,
)
from .matricize import EffectiveShape, effective_shape, square_matricize, unmatricize
from .tensor import DTYPE, ShapeError

WEIGHT_DECAY_MODES = ("adam", "adamw")


class NonFiniteGradientError(ValueError):
    pass


class LayerError(ValueError):
    """A per-layer failure, tagged with the layer key."""

    def __init__(self, layer, cause: Exception):
        super().__init__(f"layer {layer!r}: {cause}")
        self.layer = layer
        self.cause = cause


@dataclass(frozen=True)
class HyperParams:
    """Optimizer hyperparameters.

    ``beta1=None`` switches SMMF (and Adafactor) to momentum-free mode.
    ``eps`` is added inside the square root for SMMF and outside it for
    Adam. ``beta2``/``bias_correction`` are Adam-only;
    ``adafactor_eps``/``clip_threshold`` are Adafactor-only.
    """

    lr: float = 1e-3
    beta1: float | None = 0.9
    growth_rate: float = 0.999
    decay_rate: float = -0.5
    eps: float = 1e-8
    weight_decay: float = 0.0
    weight_decay_mode: str = "adamw"
    vector_reshape: bool = True
    sign_storage: str = PACKED
    beta2: float = 0.999
    bias_correction: bool = False
    adafactor_eps: float = 1e-30
    clip_threshold: float = 1.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.beta1 is not None and not 0.0 <= self.beta1 <= 1.0:
            raise ValueError(f"beta1 must be in [0, 1], got {self.beta1}")
        if not 0.0 <= self.growth_rate <= 1.0:
            raise ValueError(f"growth_rate must be in [0, 1], got {self.growth_rate}")
        if not -1.0 <= self.decay_rate <= 0.0:
            raise ValueError(f"decay_rate must be in [-1, 0], got {self.decay_rate}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.weight_decay_mode not in WEIGHT_DECAY_MODES:
            raise ValueError(f"weight_decay_mode must be one of {WEIGHT_DECAY_MODES}")
        if self.sign_storage not in SIGN_MODES:
            raise ValueError(f"sign_storage must be one of {SIGN_MODES}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if not self.clip_threshold > 0:
            raise ValueError("clip_threshold must be positive")


def beta1_at(t: int, beta1: float, growth_rate: float) -> float:
    """First-moment coefficient ``beta1 * growth_rate**(t-1)``."""
    return beta1 * growth_rate ** (t - 1)


def beta2_at(t: int, decay_rate: float) -> float:
    """Second-moment coefficient ``1 - t**decay_rate``; zero at ``t = 1``."""
    return 1.0 - float(t) ** decay_rate


def apply_weight_decay(weight: np.ndarray, grad: np.ndarray, hp: HyperParams):
    """Return ``(weight, grad)`` with decay applied per ``hp.weight_decay_mode``.

    ``adam`` adds ``c * W`` to the gradient; ``adamw`` shrinks the weight by
    ``(1 - lr * c)``.
    """
    c = hp.weight_decay
    if c == 0:
        return weight, grad
    if hp.weight_decay_mode == "adam":
        return weight, grad + c * weight
    return weight * (1.0 - hp.lr * c), grad


def _check_inputs(weight: np.ndarray, grad: np.ndarray) -> None:
    if weight.shape != grad.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match weight {weight.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("gradient has non-finite entries")


# -- SMMF ---------------------------------------------------------------------


@dataclass
class SmmfLayerState:
    shape: EffectiveShape
    m: CompressedMomentum | None
    v: CompressedMomentum
    step: int = 1

    @classmethod
    def init(cls, param_shape, hp: HyperParams) -> "SmmfLayerState":
        es = effective_shape(tuple(param_shape))
        n, m = es.matrix_shape
        first = None
        if hp.beta1 is not None:
            first = CompressedMomentum.zeros(n, m, with_signs=True, storage_mode=hp.sign_storage)
        return cls(es, first, CompressedMomentum.zeros(n, m, with_signs=False))

    def nbytes(self, bpe: int = 4) -> int:
        n = self.v.nbytes(bpe)
        if self.m is not None:
            n += self.m.nbytes(bpe)
        return n


@dataclass
class DenseLayerState:
    """Unfactored moments; used by Adam and by SMMF's 1-D fallback."""

    m: np.ndarray | None
    v: np.ndarray
    step: int = 1

    @classmethod
    def init(cls, param_shape, with_m: bool = True) -> "DenseLayerState":
        m = np.zeros(param_shape, DTYPE) if with_m else None
        return cls(m, np.zeros(param_shape, DTYPE))

    def nbytes(self, bpe: int = 4) -> int:
        n = self.v.size
        if self.m is not None:
            n += self.m.size
        return n * bpe


AdamLayerState = DenseLayerState


def smmf_update(state: SmmfLayerState, grad: np.ndarray, hp: HyperParams) -> np.ndarray:
    """Advance the factored moments by one step and return the update direction.

    The update is built from the freshly blended moments before they are
    re-compressed into ``state``.
    """
    es = state.shape
    g = square_matricize(grad, es)
    t = state.step

    b2 = beta2_at(t, hp.decay_rate)
    v = b2 * decompress(state.v.factors) + (1.0 - b2) * np.square(g)
    if state.m is not None:
        b1 = beta1_at(t, hp.beta1, hp.growth_rate)
        m = b1 * decompress(state.m) + (1.0 - b1) * g
        state.m = CompressedMomentum(*compress(m, hp.sign_storage))
    else:
        m = g
    state.v = CompressedMomentum(compress_nonnegative(v))

    state.step += 1
    return unmatricize(m / np.sqrt(v + hp.eps), es)


def smmf_step(state: SmmfLayerState, weight: np.ndarray, grad: np.ndarray, hp: HyperParams):
    """One factored SMMF step. Returns ``(new_weight, state)``; ``state`` is updated in place."""
    _check_inputs(weight, grad)
    if state.shape.numel != weight.size:
        raise ShapeError(f"state holds {state.shape.numel} elements, weight has {weight.size}")
    weight, grad = apply_weight_decay(weight, grad, hp)
    return weight - hp.lr * smmf_update(state, grad, hp), state


def smmf_step_unfactored(state: DenseLayerState, weight: np.ndarray, grad: np.ndarray, hp: HyperParams):
    """SMMF's scheduler-driven recursion with dense moments (vectors with ``vector_reshape=False``)."""
    _check_inputs(weight, grad)
    weight, grad = apply_weight_decay(weight, grad, hp)
    t = state.step
    b2 = beta2_at(t, hp.decay_rate)
    state.v = b2 * state.v + (1.0 - b2) * np.square(grad)
    if state.m is not None:
        b1 = beta1_at(t, hp.beta1, hp.growth_rate)
        state.m = b1 * state.m + (1.0 - b1) * grad
        num = state.m
    else:
        num = grad
    state.step += 1
    return weight - hp.lr * (num / np.sqrt(state.v + hp.eps)), state


# -- baselines ----------------------------------------------------------------


def adam_step(state: DenseLayerState, weight: np.ndarray, grad: np.ndarray, hp: HyperParams):
    """Adam with constant betas and ``eps`` outside the root; bias correction optional."""
    _check_inputs(weight, grad)
    weight, grad = apply_weight_decay(weight, grad, hp)
    t = state.step
    b1 = hp.beta1 if hp.beta1 is not None else 0.0
    b2 = hp.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * np.square(grad)
    m, v = state.m, state.v
    if hp.bias_correction:
        m = m / (1.0 - b1**t)
        v = v / (1.0 - b2**t)
    state.step += 1
    return weight - hp.lr * (m / (np.sqrt(v) + hp.eps)), state


@dataclass
class AdafactorLayerState:
    """Factored second moment per trailing-matrix slice.

    ``row`` has shape ``(slices, n_{d-1})`` and ``col`` ``(slices, n_d)``;
    parameters of rank < 2 keep a dense ``v`` instead.
    """

    param_shape: tuple[int, ...]
    row: np.ndarray | None
    col: np.ndarray | None
    v: np.ndarray | None
    m: np.ndarray | None
    step: int = 1

    @classmethod
    def init(cls, param_shape, hp: HyperParams) -> "AdafactorLayerState":
        shape = tuple(param_shape)
        m = np.zeros(shape, DTYPE) if hp.beta1 is not None else None
        if len(shape) < 2:
            return cls(shape, None, None, np.zeros(shape, DTYPE), m)
        slices = math.prod(shape[:-2])
        return cls(shape, np.zeros((slices, shape[-2]), DTYPE), np.zeros((slices, shape[-1]), DTYPE), None, m)

    @property
    def factored(self) -> bool:
        return self.row is not None

    @property
    def slice_count(self) -> int:
        return self.row.shape[0] if self.factored else 0

    def nbytes(self, bpe: int = 4) -> int:
        n = self.row.size + self.col.size if self.factored else self.v.size
        if self.m is not None:
            n += self.m.size
        return n * bpe

    def second_moment(self) -> np.ndarray:
        """Reconstructed second-moment estimate in the parameter's shape."""
        if not self.factored:
            return self.v.copy()
        denom = self.row.sum(axis=1)[:, None, None]
        outer = self.row[:, :, None] * self.col[:, None, :]
        vhat = np.divide(outer, denom, out=np.zeros_like(outer), where=denom > 0)
        return vhat.reshape(self.param_shape)


def adafactor_step(state: AdafactorLayerState, weight: np.ndarray, grad: np.ndarray, hp: HyperParams):
    """Simplified Adafactor: factored second moment, update clipping, fixed lr.

    Row/column statistics are sums of ``grad**2 + adafactor_eps`` over each
    trailing-matrix slice; the second-moment coefficient follows the same
    ``1 - t**decay_rate`` schedule as SMMF.
    """
    _check_inputs(weight, grad)
    weight, grad = apply_weight_decay(weight, grad, hp)
    b2 = beta2_at(state.step, hp.decay_rate)
    g2 = np.square(grad) + hp.adafactor_eps
    if state.factored:
        s = g2.reshape(state.slice_count, *grad.shape[-2:])
        state.row = b2 * state.row + (1.0 - b2) * s.sum(axis=2)
        state.col = b2 * state.col + (1.0 - b2) * s.sum(axis=1)
    else:
        state.v = b2 * state.v + (1.0 - b2) * g2
    vhat = state.second_moment()
    u = np.divide(grad, np.sqrt(vhat), out=np.zeros_like(grad), where=vhat > 0)
    rms = math.sqrt(float(np.mean(np.square(u))))
    u = u / max(1.0, rms / hp.clip_threshold)
    if state.m is not None:
        state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * u
        u = state.m
    state.step += 1
    return weight - hp.lr * u, state


# -- multi-layer drivers ------------------------------------------------------


class Optimizer:
    """Uniform driver: lazily creates one state per parameter key."""

    kind = "base"

    def __init__(self, hp: HyperParams | None = None, **overrides):
        hp = hp or HyperParams()
        self.hp = replace(hp, **overrides) if overrides else hp
        self.state: dict = {}

    def init_state(self, weight: np.ndarray):
        raise NotImplementedError

    def update(self, state, weight: np.ndarray, grad: np.ndarray, hp: HyperParams):
        raise NotImplementedError

    def step(self, params, lr: float | None = None):
        """Update every ``(weight, grad)`` pair; returns new weights in the same container shape.

        ``params`` is a mapping ``key -> (weight, grad)`` or a sequence of
        pairs keyed by position. ``lr`` overrides ``hp.lr`` for this step only.
        """
        hp = self.hp if lr is None else replace(self.hp, lr=lr)
        is_map = isinstance(params, Mapping)
        items = params.items() if is_map else enumerate(params)
        out = {}
        for key, (weight, grad) in items:
            try:
                weight = np.asarray(weight, dtype=DTYPE)
                grad = np.asarray(grad, dtype=DTYPE)
                state = self.state.get(key)
                if state is None:
                    state = self.state[key] = self.init_state(weight)
                out[key], _ = self.update(state, weight, grad, hp)
            except ValueError as exc:
                raise LayerError(key, exc) from exc
        return out if is_map else [out[k] for k in range(len(out))]

    def state_bytes(self, bpe: int = 4) -> int:
        """Persistent optimizer-state bytes at ``bpe`` bytes per stored real."""
        return sum(s.nbytes(bpe) for s in self.state.values() if s is not None)


def _is_factored(shape, hp: HyperParams) -> bool:
    squeezed = [n for n in shape if n != 1]
    return not (len(squeezed) == 1 and not hp.vector_reshape)


class SMMF(Optimizer):
    kind = "smmf"

    def init_state(self, weight):
        if _is_factored(weight.shape, self.hp):
            return SmmfLayerState.init(weight.shape, self.hp)
        return DenseLayerState.init(weight.shape, with_m=self.hp.beta1 is not None)

    def update(self, state, weight, grad, hp):
        if isinstance(state, SmmfLayerState):
            return smmf_step(state, weight, grad, hp)
        return smmf_step_unfactored(state, weight, grad, hp)


class Adam(Optimizer):
    kind = "adam"

    def init_state(self, weight):
        return DenseLayerState.init(weight.shape)

    def update(self, state, weight, grad, hp):
        return adam_step(state, weight, grad, hp)


class Adafactor(Optimizer):
    kind = "adafactor"

    def init_state(self, weight):
        return AdafactorLayerState.init(weight.shape, self.hp)

    def update(self, state, weight, grad, hp):
        return adafactor_step(state, weight, grad, hp)


class SGD(Optimizer):
    """Plain gradient descent; no state."""

    kind = "sgd"

    def init_state(self, weight):
        return None

    def update(self, state, weight, grad, hp):
        _check_inputs(weight, grad)
        weight, grad = apply_weight_decay(weight, grad, hp)
        return weight - hp.lr * grad, state


OPTIMIZERS = {cls.kind: cls for cls in (SMMF, Adam, Adafactor, SGD)}


def make_optimizer(kind: str, hp: HyperParams | None = None, **overrides) -> Optimizer:
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; expected one of {sorted(OPTIMIZERS)}") from None
    return cls(hp, **overrides)
