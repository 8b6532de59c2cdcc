"""Optimizers, the training loop, and model-agnostic meta-learning.

Gradients are accumulated per batch by running backward once per sample
(the tape adds into .grad), dividing by the batch size, then stepping.
Optimizer steps clear gradients so two consecutive steps never see stale
state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, EmptyInputError
from .metrics import segmentation_scores
from .models import ModelGraph, clone_model, forward, zero_grads
from .tensor import Tensor, backward


# ---------------------------------------------------------------------------
# optimizer steps


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def sgd_step(model: ModelGraph, lr: float) -> None:
    """w -= lr * grad for every parameter; clears gradients."""
    for name, p in model.params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise DimensionError(f"sgd_step: grad shape mismatch on {name}")
        p.data -= lr * p.grad
        p.grad = None


def adam_step(model: ModelGraph, state: AdamState) -> None:
    """One Adam update with bias correction; clears gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in model.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"adam_step: grad shape mismatch on {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# losses over samples


def _fit_target(pred: Tensor, target: np.ndarray) -> np.ndarray:
    """Reshape (and center-crop if needed) a mask to the prediction's shape."""
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 2 and pred.data.ndim == 3 and pred.data.shape[2] == 1:
        ph, pw = pred.data.shape[:2]
        th, tw = t.shape
        if (th, tw) != (ph, pw):
            if th < ph or tw < pw:
                raise DimensionError(f"target {t.shape} smaller than prediction {pred.data.shape}")
            r0, c0 = (th - ph) // 2, (tw - pw) // 2
            t = t[r0 : r0 + ph, c0 : c0 + pw]
        t = t[:, :, None]
    if t.shape != pred.data.shape:
        raise DimensionError(f"target shape {t.shape} != prediction shape {pred.data.shape}")
    return t


def _one_hot(label: int, num_classes: int) -> np.ndarray:
    label = int(label)
    if not 0 <= label < num_classes:
        raise ConfigError(f"class index {label} outside [0, {num_classes})")
    y = np.zeros(num_classes)
    y[label] = 1.0
    return y


def sample_loss(model: ModelGraph, pred: Tensor, target, loss: str) -> Tensor:
    """Loss tensor for one sample; target is a mask array or a class index."""
    if loss == "dice":
        return T.soft_dice_loss(pred, _fit_target(pred, target))
    if loss == "bce":
        return T.binary_cross_entropy_loss(pred, _fit_target(pred, target))
    if loss == "ce":
        return T.cross_entropy_loss(pred, _one_hot(target, pred.data.shape[-1]))
    raise ConfigError(f"unknown loss {loss!r} (expected 'dice', 'bce' or 'ce')")


def default_loss(model: ModelGraph) -> str:
    return "dice" if model.kind == "unet" else "ce"


def batch_gradients(model: ModelGraph, samples: Sequence, loss: str) -> float:
    """Accumulate mean-loss gradients over samples into model params.

    Returns the mean loss value. Caller steps the optimizer afterwards.
    """
    if not samples:
        raise EmptyInputError("batch_gradients: empty batch")
    zero_grads(model)
    total = 0.0
    for x, y in samples:
        lt = sample_loss(model, forward(model, x), y, loss)
        backward(lt)
        total += lt.item()
    inv = 1.0 / len(samples)
    for p in model.params.values():
        if p.grad is not None:
            p.grad *= inv
    return total * inv


# ---------------------------------------------------------------------------
# training log


@dataclass
class LogRow:
    epoch: int
    split: str
    loss: float
    miou: Optional[float]
    accuracy: float
    dice: Optional[float]


LOG_HEADER = ("epoch", "split", "loss", "miou", "accuracy", "dice")


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_HEADER)
            for r in self.rows:
                w.writerow([
                    r.epoch,
                    r.split,
                    repr(float(r.loss)),
                    "" if r.miou is None else repr(float(r.miou)),
                    repr(float(r.accuracy)),
                    "" if r.dice is None else repr(float(r.dice)),
                ])

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != LOG_HEADER:
                raise DimensionError(f"training log {path}: bad header {header}")
            for rec in reader:
                rows.append(LogRow(
                    int(rec[0]), rec[1], float(rec[2]),
                    float(rec[3]) if rec[3] else None,
                    float(rec[4]),
                    float(rec[5]) if rec[5] else None,
                ))
        return cls(rows)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_segmentation(model: ModelGraph, samples: Sequence, loss: str = "dice") -> dict:
    """Mean loss plus MIoU/accuracy/Dice of the 0.5-thresholded predictions."""
    if not samples:
        raise EmptyInputError("evaluate_segmentation: no samples")
    loss_sum = 0.0
    agg = {"miou": 0.0, "accuracy": 0.0, "dice": 0.0}
    for x, y in samples:
        pred = forward(model, x)
        loss_sum += sample_loss(model, pred, y, loss).item()
        hard = (pred.data[:, :, 0] >= 0.5).astype(np.uint8)
        target = _fit_target(pred, y)[:, :, 0].astype(np.uint8)
        for k, v in segmentation_scores(target, hard).items():
            agg[k] += v
    n = len(samples)
    return {"loss": loss_sum / n, "miou": agg["miou"] / n,
            "accuracy": agg["accuracy"] / n, "dice": agg["dice"] / n}


def classifier_predictions(model: ModelGraph, images: Iterable) -> list[int]:
    return [int(np.argmax(forward(model, x).data)) for x in images]


def evaluate_classifier(model: ModelGraph, samples: Sequence) -> dict:
    """Mean cross-entropy and argmax accuracy over (image, class index) pairs."""
    if not samples:
        raise EmptyInputError("evaluate_classifier: no samples")
    loss_sum = 0.0
    correct = 0
    for x, y in samples:
        pred = forward(model, x)
        loss_sum += sample_loss(model, pred, y, "ce").item()
        correct += int(np.argmax(pred.data)) == int(y)
    n = len(samples)
    return {"loss": loss_sum / n, "accuracy": correct / n}


def _epoch_row(model: ModelGraph, samples, loss: str, epoch: int, split: str) -> LogRow:
    if model.kind == "unet":
        s = evaluate_segmentation(model, samples, loss)
        return LogRow(epoch, split, s["loss"], s["miou"], s["accuracy"], s["dice"])
    s = evaluate_classifier(model, samples)
    return LogRow(epoch, split, s["loss"], None, s["accuracy"], None)


# ---------------------------------------------------------------------------
# training loop


def train(
    model: ModelGraph,
    train_samples: Sequence,
    val_samples: Sequence = (),
    *,
    loss: str | None = None,
    epochs: int = 1,
    batch_size: int = 8,
    lr: float = 1e-3,
    optimizer: str = "adam",
    seed: int = 0,
    checkpoint: Callable[[ModelGraph, int, LogRow], None] | None = None,
) -> TrainingLog:
    """Mini-batch training with seeded shuffling.

    Logs one train row (and one val row when val_samples is non-empty) per
    epoch; the model keeps its final-epoch weights. checkpoint, if given,
    runs after every epoch with (model, epoch, last row of that epoch).
    """
    if not train_samples:
        raise EmptyInputError("train: no training samples")
    if epochs < 1:
        raise ConfigError(f"train: epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"train: batch_size must be >= 1, got {batch_size}")
    if optimizer not in ("adam", "sgd"):
        raise ConfigError(f"train: unknown optimizer {optimizer!r}")
    loss = loss or default_loss(model)

    rng = np.random.default_rng(seed)
    state = AdamState(lr=lr)
    log = TrainingLog()
    samples = list(train_samples)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in order[start : start + batch_size]]
            batch_gradients(model, batch, loss)
            if optimizer == "adam":
                adam_step(model, state)
            else:
                sgd_step(model, lr)
        model.epoch = epoch
        row = _epoch_row(model, samples, loss, epoch, "train")
        log.rows.append(row)
        if val_samples:
            row = _epoch_row(model, list(val_samples), loss, epoch, "val")
            log.rows.append(row)
        if checkpoint is not None:
            checkpoint(model, epoch, row)
    return log


# ---------------------------------------------------------------------------
# meta-learning


@dataclass
class MetaTask:
    x_support: list
    y_support: list
    x_query: list
    y_query: list


@dataclass
class MetaConfig:
    inner_lr: float = 0.05
    outer_lr: float = 0.1
    inner_steps: int = 1
    order: str = "first"  # "second" adds a finite-difference HVP correction
    hvp_eps: float = 1e-4


def inner_adapt(model: ModelGraph, task: MetaTask, cfg: MetaConfig,
                loss: str | None = None) -> ModelGraph:
    """Clone the model and take cfg.inner_steps SGD steps on the support set.

    The input model is left untouched.
    """
    if cfg.inner_steps < 1:
        raise ConfigError(f"inner_steps must be >= 1, got {cfg.inner_steps}")
    loss = loss or default_loss(model)
    adapted = clone_model(model)
    support = list(zip(task.x_support, task.y_support))
    for _ in range(cfg.inner_steps):
        batch_gradients(adapted, support, loss)
        sgd_step(adapted, cfg.inner_lr)
    return adapted


def _flat_names(model: ModelGraph) -> list[str]:
    return sorted(model.params)


def get_flat(model: ModelGraph) -> np.ndarray:
    return np.concatenate([model.params[k].data.reshape(-1) for k in _flat_names(model)])


def set_flat(model: ModelGraph, vec: np.ndarray) -> None:
    i = 0
    for k in _flat_names(model):
        p = model.params[k]
        n = p.data.size
        p.data = vec[i : i + n].reshape(p.data.shape).copy()
        i += n
    if i != vec.size:
        raise DimensionError(f"set_flat: vector has {vec.size} entries, model needs {i}")


def _grad_flat(model: ModelGraph, theta: np.ndarray, samples, loss: str,
               scratch: ModelGraph) -> np.ndarray:
    set_flat(scratch, theta)
    batch_gradients(scratch, samples, loss)
    return np.concatenate([
        (scratch.params[k].grad if scratch.params[k].grad is not None
         else np.zeros_like(scratch.params[k].data)).reshape(-1)
        for k in _flat_names(scratch)
    ])


def meta_outer_step(model: ModelGraph, tasks: Sequence[MetaTask], cfg: MetaConfig,
                    loss: str | None = None) -> float:
    """One meta update over a batch of tasks; returns the mean query loss.

    First order: average the query gradients taken at the adapted weights.
    Second order: additionally backpropagate through the inner trajectory
    via finite-difference Hessian-vector products.
    """
    if not tasks:
        raise EmptyInputError("meta_outer_step: no tasks")
    if cfg.order not in ("first", "second"):
        raise ConfigError(f"meta order must be 'first' or 'second', got {cfg.order!r}")
    loss = loss or default_loss(model)

    theta0 = get_flat(model)
    scratch = clone_model(model)
    meta_grad = np.zeros_like(theta0)
    query_loss = 0.0
    for task in tasks:
        support = list(zip(task.x_support, task.y_support))
        query = list(zip(task.x_query, task.y_query))
        traj = [theta0]
        theta = theta0
        for _ in range(cfg.inner_steps):
            theta = theta - cfg.inner_lr * _grad_flat(model, theta, support, loss, scratch)
            traj.append(theta)
        set_flat(scratch, traj[-1])
        query_loss += _eval_mean_loss(scratch, query, loss)
        v = _grad_flat(model, traj[-1], query, loss, scratch)
        if cfg.order == "second":
            for j in range(cfg.inner_steps - 1, -1, -1):
                v = v - cfg.inner_lr * _hvp(model, traj[j], support, loss, v, cfg.hvp_eps, scratch)
        meta_grad += v
    meta_grad /= len(tasks)
    set_flat(model, theta0 - cfg.outer_lr * meta_grad)
    zero_grads(model)
    return query_loss / len(tasks)


def _eval_mean_loss(model: ModelGraph, samples, loss: str) -> float:
    return sum(sample_loss(model, forward(model, x), y, loss).item()
               for x, y in samples) / len(samples)


def _hvp(model: ModelGraph, theta: np.ndarray, samples, loss: str,
         v: np.ndarray, eps: float, scratch: ModelGraph) -> np.ndarray:
    """Central-difference Hessian-vector product of the sample loss at theta."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    u = v / norm
    gp = _grad_flat(model, theta + eps * u, samples, loss, scratch)
    gm = _grad_flat(model, theta - eps * u, samples, loss, scratch)
    return norm * (gp - gm) / (2.0 * eps)
