"""Loss, optimiser and the epoch loop.

Mini-batches are taken in chronological order with no shuffling, so a run is
a pure function of the initial network, the data and the config.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset import WindowedSample, stack_samples
from .lstm import Network, backward, forward, predict

__all__ = [
    "TrainConfig",
    "TrainingReport",
    "TrainingDivergedError",
    "mse",
    "evaluate",
    "init_moments",
    "adam_step",
    "train",
    "format_mse",
]


class TrainingDivergedError(RuntimeError):
    """The loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 400
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def format_mse(x: float) -> str:
    """Ten significant digits, trailing zeros kept (``0.007266084000``)."""
    return f"{x:#.10g}"


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"mse needs equal non-zero lengths, got {p.size} and {t.size}")
    r = p - t
    return float(np.mean(r * r))


def evaluate(net: Network, X: np.ndarray, y: np.ndarray) -> float:
    return mse(predict(net, X), y)


def init_moments(params: list[dict[str, np.ndarray]]) -> list[dict[str, tuple[np.ndarray, np.ndarray]]]:
    return [{k: (np.zeros_like(v), np.zeros_like(v)) for k, v in p.items()} for p in params]


def adam_step(params, grads, moments, t: int, cfg: TrainConfig, trainable: Sequence[bool] | None = None):
    """One bias-corrected Adam update, in place.

    ``params``, ``grads`` and ``moments`` are per-layer dicts of arrays (moments
    hold ``(m, v)`` pairs). Layers whose ``trainable`` flag is False are
    skipped entirely: weights and moments stay as they are.
    """
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    if not (len(params) == len(grads) == len(moments)):
        raise ValueError("params, grads and moments must cover the same layers")
    if trainable is None:
        trainable = [True] * len(params)
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, mom, on in zip(params, grads, moments, trainable):
        if not on:
            continue
        if p.keys() != g.keys():
            raise ValueError("gradient tensors do not match parameter tensors")
        for name, theta in p.items():
            grad = g[name]
            if grad.shape != theta.shape:
                raise ValueError(f"gradient shape {grad.shape} != parameter shape {theta.shape} for {name}")
            m, v = mom[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * (grad * grad)
            theta -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, moments


@dataclass
class TrainingReport:
    initial_train_mse: float
    initial_val_mse: float
    best_train_mse: float
    best_val_mse: float
    best_train_epoch: int
    best_val_epoch: int
    train_curve: list[float]
    val_curve: list[float]
    best_network: Network = field(repr=False)
    gradient_samples: int = 0  # samples that contributed gradients

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("best_network")
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    def write_curves(self, path) -> None:
        """``epoch,train_mse,val_mse`` with one row per epoch."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for e, (a, b) in enumerate(zip(self.train_curve, self.val_curve), start=1):
                w.writerow([e, repr(a), repr(b)])


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        X, y = samples
        return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if samples and isinstance(samples[0], WindowedSample):
        return stack_samples(samples)
    raise ValueError("samples must be a non-empty list of WindowedSample or an (X, y) pair")


def _check_finite(value: float, what: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"{what} is {value} at epoch {epoch}")


def train(net: Network, train_samples, val_samples, cfg: TrainConfig = TrainConfig()) -> TrainingReport:
    """Train ``net`` in place for ``cfg.max_epochs`` epochs and report the loss history.

    Initial MSEs are measured before any update. After every epoch the full
    training and validation sets are re-evaluated; best values use the first
    epoch attaining the minimum (epochs count from 1), and the network at the
    best validation epoch is kept in the report.
    """
    X, y = _as_arrays(train_samples)
    Xv, yv = _as_arrays(val_samples)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    if X.shape[2] != net.input_dim or Xv.shape[2] != net.input_dim:
        raise ValueError(f"network expects {net.input_dim} features, data has {X.shape[2]}/{Xv.shape[2]}")

    init_train = evaluate(net, X, y)
    init_val = evaluate(net, Xv, yv)
    _check_finite(init_train, "initial training MSE", 0)
    _check_finite(init_val, "initial validation MSE", 0)

    params = net.params()
    moments = init_moments(params)
    n = X.shape[0]
    bs = cfg.batch_size
    step = 0
    seen = 0
    train_curve: list[float] = []
    val_curve: list[float] = []
    best_val = math.inf
    best_net = net.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        for lo in range(0, n, bs):
            Xb, yb = X[lo : lo + bs], y[lo : lo + bs]
            pred, cache = forward(net, Xb)
            grads = backward(net, cache, 2.0 * (pred - yb) / yb.size)
            step += 1
            adam_step(params, grads, moments, step, cfg, net.trainable)
            net.touch()
            seen += yb.size
        tr = evaluate(net, X, y)
        va = evaluate(net, Xv, yv)
        _check_finite(tr, "training MSE", epoch)
        _check_finite(va, "validation MSE", epoch)
        train_curve.append(tr)
        val_curve.append(va)
        if va < best_val:
            best_val = va
            best_net = net.copy()

    best_train_epoch = int(np.argmin(train_curve)) + 1
    best_val_epoch = int(np.argmin(val_curve)) + 1
    return TrainingReport(
        initial_train_mse=init_train,
        initial_val_mse=init_val,
        best_train_mse=train_curve[best_train_epoch - 1],
        best_val_mse=val_curve[best_val_epoch - 1],
        best_train_epoch=best_train_epoch,
        best_val_epoch=best_val_epoch,
        train_curve=train_curve,
        val_curve=val_curve,
        best_network=best_net,
        gradient_samples=seen,
    )
