"""Small models with hand-written gradients, synthetic datasets and a
finite-difference gradient oracle.

Every model holds its parameters in ``model.params`` (name -> array) and
implements ``loss_and_grads(batch, params=None)``; passing ``params`` lets
callers evaluate at a point other than the stored one.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import DTYPE, ShapeError


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=DTYPE)
        self.targets = np.asarray(self.targets, dtype=DTYPE)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(f"batch size mismatch: {self.inputs.shape[0]} inputs, {self.targets.shape[0]} targets")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


class Model:
    metric_name = "mse"

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = {k: np.asarray(v, dtype=DTYPE) for k, v in params.items()}

    def loss_and_grads(self, batch: Batch, params=None) -> tuple[float, dict[str, np.ndarray]]:
        raise NotImplementedError

    def predict(self, inputs: np.ndarray, params=None) -> np.ndarray:
        raise NotImplementedError

    def loss(self, batch: Batch, params=None) -> float:
        return self.loss_and_grads(batch, params)[0]

    def metric(self, batch: Batch, params=None) -> float:
        pred = self.predict(batch.inputs, params)
        return float(np.mean(np.square(pred - batch.targets.reshape(pred.shape))))


def _mse(pred: np.ndarray, y: np.ndarray):
    y = y.reshape(pred.shape)
    diff = pred - y
    return float(np.mean(np.square(diff))), 2.0 * diff / diff.size


class LinearRegression(Model):
    """``y = X W^T + b`` under mean squared error."""

    def __init__(self, in_features: int, out_features: int = 1):
        super().__init__({"W": np.zeros((out_features, in_features)), "b": np.zeros(out_features)})

    def predict(self, inputs, params=None):
        p = params or self.params
        if inputs.shape[1] != p["W"].shape[1]:
            raise ShapeError(f"expected {p['W'].shape[1]} features, got {inputs.shape[1]}")
        return inputs @ p["W"].T + p["b"]

    def loss_and_grads(self, batch, params=None):
        p = params or self.params
        loss, dpred = _mse(self.predict(batch.inputs, p), batch.targets)
        return loss, {"W": dpred.T @ batch.inputs, "b": dpred.sum(axis=0)}


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))


class LogisticRegression(Model):
    """Binary logistic regression with mean cross-entropy; targets in {0, 1}."""

    metric_name = "accuracy"

    def __init__(self, in_features: int):
        super().__init__({"w": np.zeros(in_features), "b": np.zeros(1)})

    def logits(self, inputs, params=None):
        p = params or self.params
        if inputs.shape[1] != p["w"].shape[0]:
            raise ShapeError(f"expected {p['w'].shape[0]} features, got {inputs.shape[1]}")
        return inputs @ p["w"] + p["b"][0]

    def predict(self, inputs, params=None):
        return _sigmoid(self.logits(inputs, params))

    def loss_and_grads(self, batch, params=None):
        z = self.logits(batch.inputs, params)
        y = batch.targets.reshape(z.shape)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = (_sigmoid(z) - y) / z.size
        return loss, {"w": batch.inputs.T @ dz, "b": np.array([dz.sum()])}

    def metric(self, batch, params=None):
        z = self.logits(batch.inputs, params)
        return float(np.mean((z > 0) == (batch.targets.reshape(z.shape) > 0.5)))


class MLP(Model):
    """One tanh hidden layer, linear output, mean squared error."""

    def __init__(self, in_features: int, hidden: int, out_features: int = 1, seed: int = 0):
        rng = np.random.default_rng(seed)
        super().__init__({
            "W1": rng.normal(0.0, 1.0 / np.sqrt(in_features), (hidden, in_features)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0.0, 1.0 / np.sqrt(hidden), (out_features, hidden)),
            "b2": np.zeros(out_features),
        })

    def _forward(self, x, p):
        if x.shape[1] != p["W1"].shape[1]:
            raise ShapeError(f"expected {p['W1'].shape[1]} features, got {x.shape[1]}")
        h = np.tanh(x @ p["W1"].T + p["b1"])
        return h, h @ p["W2"].T + p["b2"]

    def predict(self, inputs, params=None):
        return self._forward(inputs, params or self.params)[1]

    def loss_and_grads(self, batch, params=None):
        p = params or self.params
        x = batch.inputs
        h, out = self._forward(x, p)
        loss, dout = _mse(out, batch.targets)
        da = (dout @ p["W2"]) * (1.0 - h * h)
        return loss, {
            "W1": da.T @ x,
            "b1": da.sum(axis=0),
            "W2": dout.T @ h,
            "b2": dout.sum(axis=0),
        }


def rank4_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Contract patches ``(B, c_in, kh, kw)`` with a kernel ``(c_out, c_in, kh, kw)``.

    Both sides are flattened to matrices, so the output is ``(B, c_out)``.
    """
    if kernel.ndim != 4 or x.ndim != 4 or x.shape[1:] != kernel.shape[1:]:
        raise ShapeError(f"patches {x.shape} do not match kernel {kernel.shape}")
    return x.reshape(x.shape[0], -1) @ kernel.reshape(kernel.shape[0], -1).T + bias


def rank4_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
    """Gradients ``(d_patches, d_kernel, d_bias)`` of :func:`rank4_forward`."""
    xf = x.reshape(x.shape[0], -1)
    dkernel = (grad_out.T @ xf).reshape(kernel.shape)
    dx = (grad_out @ kernel.reshape(kernel.shape[0], -1)).reshape(x.shape)
    return dx, dkernel, grad_out.sum(axis=0)


class PatchNet(Model):
    """Rank-4 contraction layer, tanh, then a linear head; mean squared error."""

    def __init__(self, c_in: int = 3, c_out: int = 4, kh: int = 3, kw: int = 3, out_features: int = 1, seed: int = 0):
        rng = np.random.default_rng(seed)
        fan_in = c_in * kh * kw
        super().__init__({
            "kernel": rng.normal(0.0, 1.0 / np.sqrt(fan_in), (c_out, c_in, kh, kw)),
            "kernel_bias": np.zeros(c_out),
            "head": rng.normal(0.0, 1.0 / np.sqrt(c_out), (out_features, c_out)),
            "head_bias": np.zeros(out_features),
        })

    def _forward(self, x, p):
        h = np.tanh(rank4_forward(x, p["kernel"], p["kernel_bias"]))
        return h, h @ p["head"].T + p["head_bias"]

    def predict(self, inputs, params=None):
        return self._forward(inputs, params or self.params)[1]

    def loss_and_grads(self, batch, params=None):
        p = params or self.params
        h, out = self._forward(batch.inputs, p)
        loss, dout = _mse(out, batch.targets)
        da = (dout @ p["head"]) * (1.0 - h * h)
        _, dkernel, dbias = rank4_backward(batch.inputs, p["kernel"], da)
        return loss, {
            "kernel": dkernel,
            "kernel_bias": dbias,
            "head": dout.T @ h,
            "head_bias": dout.sum(axis=0),
        }


def make_model(kind: str, batch: Batch, seed: int = 0, **sizes) -> Model:
    """Build a model whose input size matches ``batch``."""
    x = batch.inputs
    out = 1 if batch.targets.ndim == 1 else batch.targets.shape[1]
    if kind == "linreg":
        return LinearRegression(x.shape[1], out)
    if kind == "logreg":
        return LogisticRegression(x.shape[1])
    if kind == "mlp":
        return MLP(x.shape[1], sizes.get("hidden", 16), out, seed=seed)
    if kind == "patchnet":
        _, c_in, kh, kw = x.shape
        return PatchNet(c_in, sizes.get("channels", 4), kh, kw, out, seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")


MODEL_KINDS = ("linreg", "logreg", "mlp", "patchnet")


# -- data ---------------------------------------------------------------------


def synth_data(kind: str, n: int, seed: int, **options) -> Batch:
    """Seeded synthetic dataset, reproducible from ``(kind, n, seed, options)``.

    Random numbers come from numpy's PCG64 generator (``default_rng(seed)``).

    ``linreg``
        ``x ~ N(0, I_d)``, ``y = x W^T + b + noise * N(0, 1)`` with ``W``, ``b``
        drawn once from ``N(0, 1)``. Options: ``features`` (8),
        ``outputs`` (1), ``noise`` (0.1).
    ``two-gaussians``
        Balanced labels ``y ~ Bernoulli(1/2)``, ``x ~ N((2y - 1) * s * 1, I_d)``.
        Options: ``features`` (20), ``separation`` s (2.0),
        ``label_noise`` (0.0, fraction of labels flipped).
    ``patches``
        ``x ~ N(0, 1)`` of shape ``(n, c_in, kh, kw)``, ``y = <x, K> + noise * N(0, 1)``
        for a fixed ``K ~ N(0, 1/fan_in)``. Options: ``channels`` (3),
        ``kernel`` (3), ``noise`` (0.1).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "linreg":
        d = options.get("features", 8)
        out = options.get("outputs", 1)
        noise = options.get("noise", 0.1)
        w = rng.normal(size=(out, d))
        b = rng.normal(size=out)
        x = rng.normal(size=(n, d))
        y = x @ w.T + b + noise * rng.normal(size=(n, out))
        return Batch(x, y)
    if kind == "two-gaussians":
        d = options.get("features", 20)
        sep = options.get("separation", 2.0)
        flip = options.get("label_noise", 0.0)
        y = rng.integers(0, 2, n).astype(DTYPE)
        x = rng.normal(size=(n, d)) + ((2.0 * y - 1.0) * sep)[:, None]
        if flip:
            y = np.where(rng.random(n) < flip, 1.0 - y, y)
        return Batch(x, y)
    if kind == "patches":
        c = options.get("channels", 3)
        k = options.get("kernel", 3)
        noise = options.get("noise", 0.1)
        kern = rng.normal(0.0, 1.0 / np.sqrt(c * k * k), (c, k, k))
        x = rng.normal(size=(n, c, k, k))
        y = np.tensordot(x, kern, axes=3) + noise * rng.normal(size=n)
        return Batch(x, y[:, None])
    raise ValueError(f"unknown dataset kind {kind!r}")


DATA_KINDS = ("linreg", "two-gaussians", "patches")


def minibatches(data: Batch, batch_size: int | None, seed: int) -> Iterator[Batch]:
    """Endless minibatch stream: reshuffled each epoch, or the full batch when ``batch_size`` is None."""
    n = len(data)
    if batch_size is None or batch_size >= n:
        while True:
            yield data
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield data.take(order[i:i + batch_size])


def load_csv(path) -> Batch:
    """Numeric CSV with a header row; the last column is the target."""
    arr = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2, dtype=DTYPE)
    return Batch(arr[:, :-1], arr[:, -1])


# -- gradient oracle ----------------------------------------------------------


def finite_difference_grad(model: Model, batch: Batch, h: float = 1e-5, params=None) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``model.loss`` for every parameter entry."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: v.copy() for k, v in (params or model.params).items()}
    grads = {}
    for name, value in base.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = model.loss(batch, base)
            flat[i] = orig - h
            down = model.loss(batch, base)
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_relative_error(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> float:
    """Largest per-parameter ``max|a - b| / max(max|a|, max|b|)``."""
    worst = 0.0
    for name in a:
        scale = max(np.max(np.abs(a[name])), np.max(np.abs(b[name])))
        err = np.max(np.abs(a[name] - b[name]))
        if scale > 0:
            worst = max(worst, float(err / scale))
        elif err > 0:
            return float("inf")
    return worst
