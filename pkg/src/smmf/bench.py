"""Seeded experiment runner: training metrics CSV and empirical regret.

Config files are JSON objects; unknown keys are rejected. Fields and
defaults are those of :class:`ExperimentConfig`.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .models import DATA_KINDS, MODEL_KINDS, Batch, Model, make_model, minibatches, synth_data
from .optimizers import OPTIMIZERS, HyperParams, LayerError, make_optimizer

METRIC_COLUMNS = (
    "step",
    "loss",
    "eval_metric",
    "grad_norm",
    "update_norm",
    "optimizer_state_bytes",
    "cumulative_regret",
    "wall_ms",
)
CONVEX_MODELS = ("linreg", "logreg")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int, rows: list[dict]):
        super().__init__(f"non-finite loss or weights at step {step}")
        self.step = step
        self.rows = rows


class ComparatorError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment.

    ``n`` training samples plus ``eval_n`` held-out samples are drawn from
    the same generator; with ``eval_n == 0`` the metric is computed on the
    training set. ``batch_size=None`` means full batch. ``timing`` fills the
    ``wall_ms`` column, which makes the CSV run-dependent.
    """

    optimizer: str = "smmf"
    hyperparams: dict = field(default_factory=dict)
    model: str = "logreg"
    model_options: dict = field(default_factory=dict)
    dataset: str = "two-gaussians"
    dataset_options: dict = field(default_factory=dict)
    n: int = 1000
    eval_n: int = 0
    seed: int = 0
    steps: int = 100
    batch_size: int | None = None
    warmup_steps: int = 0
    cadence: int = 1
    bpe: int = 4
    timing: bool = False
    output: str | None = None

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.dataset not in DATA_KINDS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        for name in ("n", "steps", "cadence"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.eval_n < 0 or self.warmup_steps < 0:
            raise ConfigError("eval_n and warmup_steps must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive or null")
        if self.bpe not in (4, 8):
            raise ConfigError("bpe must be 4 or 8")
        try:
            self.hp = HyperParams(**self.hyperparams)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"hyperparams: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; ``SMMF_SEED`` in the environment overrides ``seed``."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "SMMF_SEED" in os.environ:
        try:
            d["seed"] = int(os.environ["SMMF_SEED"])
        except ValueError:
            raise ConfigError("SMMF_SEED must be an integer") from None
    return ExperimentConfig.from_dict(d)


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _norm(arrays) -> float:
    return math.sqrt(sum(float(np.sum(np.square(a))) for a in arrays))


def _split(config: ExperimentConfig) -> tuple[Batch, Batch]:
    data = synth_data(config.dataset, config.n + config.eval_n, config.seed, **config.dataset_options)
    train = data.take(slice(0, config.n))
    held = data.take(slice(config.n, None)) if config.eval_n else train
    return train, held


def _lr_at(config: ExperimentConfig, t: int) -> float | None:
    if not config.warmup_steps:
        return None
    return config.hp.lr * min(1.0, t / config.warmup_steps)


def _train(config: ExperimentConfig, model: Model, stream, held: Batch, on_row=None):
    """Shared loop. Returns ``(rows, per_step_losses, optimizer)``."""
    # overflow is detected explicitly below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(config, model, stream, held, on_row)


def _train_loop(config, model, stream, held, on_row):
    opt = make_optimizer(config.optimizer, config.hp)
    rows, losses = [], []
    for t in range(1, config.steps + 1):
        batch = next(stream)
        start = time.perf_counter()
        loss, grads = model.loss_and_grads(batch)
        losses.append(loss)
        new = None
        if math.isfinite(loss):
            try:
                new = opt.step({k: (model.params[k], grads[k]) for k in model.params}, lr=_lr_at(config, t))
            except LayerError:
                new = None
        wall = (time.perf_counter() - start) * 1000.0
        if new is None or not all(np.all(np.isfinite(w)) for w in new.values()):
            row = dict.fromkeys(METRIC_COLUMNS, "")
            row.update(step=t, loss=loss)
            rows.append(row)
            if on_row:
                on_row(row)
            raise DivergenceError(t, rows)
        update_norm = _norm(new[k] - model.params[k] for k in new)
        model.params = new
        if t % config.cadence == 0 or t == config.steps:
            row = {
                "step": t,
                "loss": loss,
                "eval_metric": model.metric(held),
                "grad_norm": _norm(grads.values()),
                "update_norm": update_norm,
                "optimizer_state_bytes": opt.state_bytes(config.bpe),
                "cumulative_regret": "",
                "wall_ms": wall if config.timing else "",
            }
            rows.append(row)
            if on_row:
                on_row(row)
    return rows, losses, opt


class _CsvSink:
    def __init__(self, path):
        self.path = path
        self.fh = None
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", newline="")
            self.writer = csv.writer(self.fh, lineterminator="\n")
            self.writer.writerow(METRIC_COLUMNS)

    def __call__(self, row: dict):
        if self.fh:
            self.writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def run_experiment(config: ExperimentConfig, output=None) -> list[dict]:
    """Train per ``config`` and return metric rows; the last row is the ``final`` summary.

    Rows are written to ``output`` (or ``config.output``) as they are
    produced, so a diverged run leaves a partial CSV ending in the
    diagnostic row.
    """
    train, held = _split(config)
    model = make_model(config.model, train, config.seed, **config.model_options)
    stream = minibatches(train, config.batch_size, config.seed)
    sink = _CsvSink(output or config.output)
    start = time.perf_counter()
    try:
        rows, _, opt = _train(config, model, stream, held, sink)
        loss, grads = model.loss_and_grads(train)
        summary = dict.fromkeys(METRIC_COLUMNS, "")
        summary.update(
            step="final",
            loss=loss,
            eval_metric=model.metric(held),
            grad_norm=_norm(grads.values()),
            optimizer_state_bytes=opt.state_bytes(config.bpe),
            wall_ms=(time.perf_counter() - start) * 1000.0 if config.timing else "",
        )
        rows.append(summary)
        sink(summary)
    finally:
        sink.close()
    return rows


def write_metrics(rows: list[dict], path) -> None:
    sink = _CsvSink(path)
    try:
        for row in rows:
            sink(row)
    finally:
        sink.close()


# -- regret -------------------------------------------------------------------


@dataclass
class RegretSeries:
    """Per-step online losses ``f_t(w_t)``, comparator losses ``f_t(w*)`` and their cumulative gap."""

    losses: np.ndarray
    comparator_losses: np.ndarray
    w_star: dict | None = None

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.losses - self.comparator_losses)

    @property
    def total(self) -> float:
        return float(np.sum(self.losses - self.comparator_losses))


def evaluate_regret(model: Model, batches: list[Batch], iterates: list[dict], w_star: dict) -> RegretSeries:
    """Regret of the given iterate sequence; ``iterates[t]`` is evaluated on ``batches[t]``."""
    losses = np.array([model.loss(b, w) for b, w in zip(batches, iterates)])
    comp = np.array([model.loss(b, w_star) for b in batches])
    return RegretSeries(losses, comp, w_star)


def fit_comparator(model: Model, data: Batch, tol: float = 1e-8, max_iter: int = 200_000) -> dict:
    """Full-batch gradient descent with backtracking until the gradient norm is below ``tol``.

    Starts from zero parameters; deterministic.
    """
    w = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 1.0
    loss, g = model.loss_and_grads(data, w)
    for _ in range(max_iter):
        gn2 = sum(float(np.sum(np.square(v))) for v in g.values())
        if math.sqrt(gn2) < tol:
            return w
        while True:
            cand = {k: w[k] - step * g[k] for k in w}
            cand_loss, cand_g = model.loss_and_grads(data, cand)
            if cand_loss <= loss - 0.5 * step * gn2 or step < 1e-12:
                break
            step *= 0.5
        w, loss, g = cand, cand_loss, cand_g
        step *= 2.0
    raise ComparatorError(f"comparator did not reach gradient norm {tol} in {max_iter} iterations")


def regret_track(config: ExperimentConfig, output=None, tol: float = 1e-8) -> RegretSeries:
    """Online run over a fixed stream of ``steps * batch_size`` fresh samples.

    ``f_t`` is the mean loss on the ``t``-th consecutive block of the stream,
    evaluated at the iterate before the step-``t`` update. The comparator
    minimizes ``sum_t f_t`` post hoc.
    """
    if config.model not in CONVEX_MODELS:
        raise ConfigError(f"regret tracking needs a convex model {CONVEX_MODELS}, got {config.model!r}")
    bs = config.batch_size or 1
    data = synth_data(config.dataset, config.steps * bs, config.seed, **config.dataset_options)
    blocks = [data.take(slice(i * bs, (i + 1) * bs)) for i in range(config.steps)]
    model = make_model(config.model, data, config.seed, **config.model_options)
    rows, losses, _ = _train(config, model, iter(blocks), data)

    w_star = fit_comparator(model, data, tol)
    # every block has the same size, so the sum of block means is steps * overall mean
    comp = np.array([model.loss(b, w_star) for b in blocks])
    series = RegretSeries(np.array(losses), comp, w_star)
    cum = series.cumulative
    for row in rows:
        row["cumulative_regret"] = float(cum[row["step"] - 1])
    if output or config.output:
        write_metrics(rows, output or config.output)
    return series
