"""Plain minibatch SGD on the mean pixel-wise cross-entropy."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceDetected, InvalidArgument, ShapeMismatch
from .model import ModelGraph, backward, predict

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Images (N, C, H, W) in [0, 1] with per-pixel labels (N, H, W)."""

    images: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.masks = np.asarray(self.masks)
        if self.images.ndim != 4 or self.masks.ndim != 3:
            raise ShapeMismatch("images must be NCHW and masks NHW")
        if self.images.shape[0] != self.masks.shape[0] or self.images.shape[2:] != self.masks.shape[1:]:
            raise ShapeMismatch(f"images {self.images.shape} vs masks {self.masks.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    shuffle: bool = True

    def check(self) -> None:
        if not self.learning_rate >= 0:
            raise InvalidArgument("learning_rate must be >= 0")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")


@dataclass
class TrainResult:
    model: ModelGraph
    losses: list[float] = field(default_factory=list)


def sgd_step(model: ModelGraph, grads: dict, lr: float) -> None:
    for (i, name), g in grads.items():
        p = getattr(model.layers[i], name)
        p -= p.dtype.type(lr) * g


def train(model: ModelGraph, data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Train a copy of ``model``; the input model is left untouched.

    ``losses[e]`` is the mean minibatch loss of epoch ``e``.  Raises
    DivergenceDetected as soon as a minibatch loss is not finite.
    """
    cfg.check()
    if len(data) == 0:
        raise InvalidArgument("dataset is empty")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            try:
                loss, grads = backward(model, data.images[idx], data.masks[idx])
            except ArithmeticError as exc:
                raise DivergenceDetected(epoch, float("nan")) from exc
            if not math.isfinite(loss):
                raise DivergenceDetected(epoch, loss)
            sgd_step(model, grads, cfg.learning_rate)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        log.debug("epoch %d loss %.5f", epoch, losses[-1])
    return TrainResult(model, losses)


def evaluate_accuracy(model: ModelGraph, data: Dataset, batch_size: int = 32) -> float:
    """Pixel accuracy of argmax predictions over the whole dataset."""
    correct = 0
    for start in range(0, len(data), batch_size):
        pred = predict(model, data.images[start:start + batch_size])
        correct += int((pred == data.masks[start:start + batch_size]).sum())
    return correct / data.masks.size
