"""MSE training with Adam, plus a finite-difference gradient audit."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tape, Tensor, add, backward, finite_diff_gradient, hadamard, mean_all
from .data import Dataset
from .metrics import EvalResult, evaluate_all
from .model import CmgaModel, ModelConfig, forward, init_parameters

__all__ = [
    "DivergenceError",
    "mse_loss",
    "mse_loss_tensor",
    "Adam",
    "adam_step",
    "TrainReport",
    "batch_loss",
    "predict_dataset",
    "evaluate_model",
    "train",
    "GradCheckReport",
    "gradient_check_model",
]

logger = logging.getLogger(__name__)

DEFAULT_LR = 1e-4
DEFAULT_BATCH_SIZE = 32


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged in epoch {epoch}: loss = {loss}")
        self.epoch = epoch
        self.loss = loss


def mse_loss(pred, label) -> float:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("mse_loss of empty input")
    if p.size != y.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    d = p - y
    return float(np.mean(d * d))


def mse_loss_tensor(pred: Tensor, label) -> Tensor:
    """Differentiable mean squared error against a constant label array."""
    y = np.asarray(label, dtype=np.float64).reshape(pred.shape)
    diff = add(pred, Tensor(-y))
    return mean_all(hadamard(diff, diff))


class Adam:
    """Adam with bias correction; moments are keyed by parameter name."""

    def __init__(self, lr: float = DEFAULT_LR, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """Update the arrays in ``params`` in place."""
        if set(grads) != set(params):
            raise ValueError("gradients must cover exactly the parameters")
        for name, p in params.items():
            if np.shape(grads[name]) != p.shape:
                raise ValueError(f"gradient for {name} has shape {np.shape(grads[name])}, expected {p.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params, grads) -> None:
    state.step(params, grads)


@dataclass
class TrainReport:
    seed: int
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    def records(self) -> list[dict]:
        """Line records; epoch 0 is the loss before any update. Wall time is left out."""
        out = [{"epoch": 0, "loss": self.initial_loss, "seed": self.seed}]
        for k, loss in enumerate(self.epoch_losses):
            rec = {"epoch": k + 1, "loss": loss, "seed": self.seed}
            if k < len(self.validation):
                rec.update({f"val_{key}": val for key, val in self.validation[k].items()})
            out.append(rec)
        return out

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def batch_loss(model: CmgaModel, dataset: Dataset, index=None) -> Tensor:
    labels = dataset.labels if index is None else dataset.labels[index]
    return mse_loss_tensor(forward(model, dataset.inputs(index)), labels)


def predict_dataset(model: CmgaModel, dataset: Dataset, chunk: int = 512) -> np.ndarray:
    preds = [
        forward(model, dataset.inputs(np.arange(lo, min(lo + chunk, len(dataset))))).data
        for lo in range(0, len(dataset), chunk)
    ]
    return np.concatenate(preds)


def train(
    model: CmgaModel,
    dataset: Dataset,
    epochs: int = 50,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int = 0,
    lr: float = DEFAULT_LR,
    validation: Dataset | None = None,
    optimizer: Adam | None = None,
) -> TrainReport:
    """Fit ``model`` in place.

    Each epoch visits a fresh seeded permutation in minibatches; the loss is
    the batch mean, so gradients are averaged over the batch. The recorded
    epoch loss is the example-weighted mean of the minibatch losses.
    """
    if len(dataset) < 1:
        raise ValueError("cannot train on an empty dataset")
    if batch_size < 1 or epochs < 0:
        raise ValueError("batch_size must be >= 1 and epochs >= 0")
    opt = optimizer or Adam(lr=lr)
    rng = np.random.default_rng(seed)
    started = time.perf_counter()
    initial = mse_loss(predict_dataset(model, dataset), dataset.labels)
    if not math.isfinite(initial):
        raise DivergenceError(0, initial)
    report = TrainReport(seed=seed, initial_loss=initial)
    arrays = {k: t.data for k, t in model.params.items()}
    n = len(dataset)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            with Tape() as tape:
                loss = batch_loss(model, dataset, idx)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, value)
            model.zero_grad()
            backward(tape, loss)
            opt.step(arrays, {k: t.grad for k, t in model.params.items()})
            total += value * idx.size
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise DivergenceError(epoch, epoch_loss)
        report.epoch_losses.append(epoch_loss)
        if validation is not None:
            report.validation.append(evaluate_all(predict_dataset(model, validation), validation.labels).to_record())
        logger.debug("epoch %d loss %.6g", epoch, epoch_loss)
    report.wall_time = time.perf_counter() - started
    return report


def evaluate_model(model: CmgaModel, dataset: Dataset) -> EvalResult:
    return evaluate_all(predict_dataset(model, dataset), dataset.labels)


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tolerance]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def lines(self) -> list[str]:
        width = max(len(k) for k in self.errors)
        out = [
            f"{name:<{width}}  {err:.3e}  {'ok' if err < self.tolerance else 'FAIL'}"
            for name, err in self.errors.items()
        ]
        out.append(f"max relative error {self.max_error:.3e} (tolerance {self.tolerance:g}): "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max|n|`` over one parameter tensor (0 when both vanish)."""
    scale_ = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)))
    diff = np.max(np.abs(analytic - numeric))
    if scale_ == 0.0:
        return 0.0
    return float(diff / scale_)


def _probe(param: Tensor, loss_value):
    def f(x: Tensor) -> float:
        saved = param.data
        param.data = x.data
        try:
            return loss_value()
        finally:
            param.data = saved

    return f


def gradient_check_model(
    config: ModelConfig,
    tolerance: float = 1e-5,
    batch: int = 4,
    h: float = 1e-5,
    data_seed: int | None = None,
    model: CmgaModel | None = None,
) -> GradCheckReport:
    """Compare tape gradients of the batch MSE with central differences.

    Inputs are standard normal and labels uniform in [-3, 3], both seeded by
    ``data_seed`` (defaults to ``config.seed``).
    """
    model = model or init_parameters(config)
    cfg = model.config
    rng = np.random.default_rng([cfg.seed if data_seed is None else data_seed, 99])
    inputs = {m: rng.standard_normal((batch, cfg.seq_len, cfg.raw_dims[m])) for m in cfg.used_modalities}
    labels = rng.uniform(-3.0, 3.0, size=batch)

    def loss_value() -> float:
        return mse_loss_tensor(forward(model, inputs), labels).item()

    with Tape() as tape:
        loss = mse_loss_tensor(forward(model, inputs), labels)
    model.zero_grad()
    backward(tape, loss)
    errors = {}
    for name, param in model.params.items():
        analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
        numeric = finite_diff_gradient(_probe(param, loss_value), param.data, h)
        errors[name] = relative_error(analytic, numeric)
    return GradCheckReport(tolerance=float(tolerance), errors=errors)
