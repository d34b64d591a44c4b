"""Mini-batch training with squared-error loss and validation model selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..augment import (AugmentConfig, apply_accel_transform, apply_silhouette_transform,
                       draw_accel_transform, draw_silhouette_transform, sample_rng)
from .model import Model
from .optim import Adam

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch, value):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch} (loss={value})")


@dataclass
class TrainConfig:
    epochs: int = 1000
    model_selection: bool = True
    min_epoch: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    init_bias_to_mean: bool = True
    target_loss: Optional[float] = None  # stop once the epoch train loss drops below
    augment: Optional[AugmentConfig] = None

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs and batch_size must be >= 1, learning_rate >= 0")
        if self.model_selection and self.epochs < self.min_epoch:
            raise ValueError(f"model selection needs epochs >= {self.min_epoch}")
        return self


@dataclass
class ArraySet:
    """Aligned model inputs and targets; absent modalities are ``None``."""

    target: np.ndarray
    silhouette: Optional[np.ndarray] = None
    accel: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.target)

    def take(self, idx) -> "ArraySet":
        pick = lambda a: None if a is None else a[idx]
        return ArraySet(self.target[idx], pick(self.silhouette), pick(self.accel))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    best_epoch: int = 0


def predict_batched(model: Model, data: ArraySet, batch_size=256) -> np.ndarray:
    out = np.empty(len(data))
    for i in range(0, len(data), batch_size):
        part = data.take(slice(i, i + batch_size))
        out[i:i + batch_size] = model.forward(part.silhouette, part.accel)
    return out


def mse(model: Model, data: ArraySet) -> float:
    return float(np.mean((predict_batched(model, data) - data.target) ** 2))


def _augment_batch(batch: ArraySet, idx, epoch, cfg: AugmentConfig) -> ArraySet:
    sil = None if batch.silhouette is None else np.empty_like(batch.silhouette)
    acc = None if batch.accel is None else np.empty_like(batch.accel)
    for j, i in enumerate(idx):
        rng = sample_rng(cfg.seed, epoch, int(i))
        if sil is not None:
            h, w = sil.shape[1:3]
            sil[j] = apply_silhouette_transform(batch.silhouette[j],
                                                draw_silhouette_transform(cfg, rng, h, w))
        if acc is not None:
            acc[j] = apply_accel_transform(batch.accel[j], draw_accel_transform(cfg, rng))
    return ArraySet(batch.target, sil, acc)


def train(model: Model, train_set: ArraySet, val_set: Optional[ArraySet],
          config: TrainConfig) -> TrainResult:
    """Fit ``model`` in place; returns it holding the selected parameters.

    The per-batch loss is the mean squared error.  With model selection on,
    the kept parameters are those of the epoch (counted from 1, at least
    ``min_epoch``) with the lowest validation loss.
    """
    config.validate()
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if config.model_selection and (val_set is None or len(val_set) == 0):
        raise ValueError("model selection needs a non-empty validation set")
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    if config.init_bias_to_mean:
        _, last = list(model.head.named_layers())[-1]
        last.params["b"][...] = np.mean(train_set.target)

    n = len(train_set)
    history = []
    best = (np.inf, 0, model.copy_params())
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([config.seed, epoch])).permutation(n)
        sq_err = np.zeros(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = train_set.take(idx)
            if config.augment is not None:
                batch = _augment_batch(batch, idx, epoch, config.augment)
            pred = model.forward(batch.silhouette, batch.accel)
            resid = pred - batch.target
            sq_err[idx] = resid * resid
            model.backward(2.0 * resid / len(idx))
            opt.step(model)
        train_loss = float(np.mean(sq_err))
        if not np.isfinite(train_loss):
            raise DivergenceError(epoch, train_loss)
        val_loss = mse(model, val_set) if val_set is not None and len(val_set) else float("nan")
        history.append(EpochRecord(epoch, train_loss, val_loss))
        if config.model_selection:
            if not np.isfinite(val_loss):
                raise DivergenceError(epoch, val_loss)
            if epoch >= config.min_epoch and val_loss < best[0]:
                best = (val_loss, epoch, model.copy_params())
        if config.target_loss is not None and train_loss < config.target_loss:
            break
    if config.model_selection:
        model.set_params(best[2])
        best_epoch = best[1]
    else:
        best_epoch = history[-1].epoch
    log.debug("training finished: %d epochs, selected epoch %d", len(history), best_epoch)
    return TrainResult(model, history, best_epoch)


def write_history(path, history) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r}\n")
