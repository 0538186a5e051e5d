"""Training loop and temporal smoothing for the EHPI classifier."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..ehpi import AugmentConfig, augment_batch
from ..errors import EmptyHistory
from .net import EhpiNet, NetConfig
from .ops import softmax_cross_entropy
from .optim import balanced_sampler, lr_at_epoch, sgd_step

DEFAULT_SEEDS = (11, 23, 37, 41, 53)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    lr_step: int = 50
    lr_gamma: float = 0.1
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    smoothing_window: int = 20
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 2 or self.epochs < 1 or self.lr_step < 1 or self.smoothing_window < 1:
            raise ValueError("batch_size >= 2, epochs >= 1, lr_step >= 1 and smoothing_window >= 1 required")
        if self.lr0 <= 0 or self.lr_gamma <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("learning-rate settings must be positive")

    def lr(self, epoch: int) -> float:
        return lr_at_epoch(epoch, self.lr0, self.lr_step, self.lr_gamma)


@dataclass
class EhpiDataset:
    """Normalized EHPIs with labels: values (N, 32, 15, 3), present (N, 32, 15)."""

    values: np.ndarray
    present: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def inputs(self, dtype=np.float32) -> np.ndarray:
        return np.ascontiguousarray(self.values.transpose(0, 3, 1, 2), dtype=dtype)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float | None


@dataclass
class TrainResult:
    net: EhpiNet
    best_net: EhpiNet
    best_epoch: int
    history: list[EpochRecord]

    @property
    def best_val_acc(self) -> float | None:
        return self.history[self.best_epoch].val_acc if self.history else None


def accuracy(net: EhpiNet, data: EhpiDataset) -> float:
    if len(data) == 0:
        return float("nan")
    pred = net.predict_proba(data.inputs(net.dtype)).argmax(axis=1)
    return float(np.mean(pred == data.labels))


def train(
    data: EhpiDataset,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    seed: int,
    val: EhpiDataset | None = None,
    log: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train from scratch with balanced sampling and on-the-fly augmentation.

    A single generator seeded with ``seed`` drives initialization, sampling
    and augmentation, so a run is reproducible at a fixed BLAS thread count.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if len(np.unique(data.labels)) < 2:
        raise ValueError("training needs at least two classes")
    dtype = np.dtype(train_cfg.dtype)
    rng = np.random.default_rng(seed)
    net = EhpiNet.create(net_cfg, rng, dtype)
    decay = net.decay_mask()
    velocity: dict[str, np.ndarray] = {}
    history: list[EpochRecord] = []
    best_net, best_epoch, best_acc = net.copy(), 0, -1.0

    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr(epoch)
        order = balanced_sampler(data.labels, rng, data.num_classes)
        loss_sum, seen = 0.0, 0
        for start in range(0, len(order), train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            if len(idx) < 2:
                continue
            values, _ = augment_batch(data.values[idx], data.present[idx], rng, train_cfg.augment)
            x = np.ascontiguousarray(values.transpose(0, 3, 1, 2), dtype=dtype)
            logits, cache = net.forward(x, train=True)
            loss, dlogits = softmax_cross_entropy(logits, data.labels[idx])
            grads = net.backward(dlogits.astype(dtype, copy=False), cache)
            sgd_step(net.params, grads, velocity, lr, train_cfg.momentum, train_cfg.weight_decay, decay)
            loss_sum += loss * len(idx)
            seen += len(idx)
        val_acc = accuracy(net, val) if val is not None and len(val) else None
        rec = EpochRecord(epoch, lr, loss_sum / max(seen, 1), val_acc)
        history.append(rec)
        score = val_acc if val_acc is not None else -rec.train_loss
        if score > best_acc:
            best_net, best_epoch, best_acc = net.copy(), epoch, score
        if log is not None:
            log(rec)
    return TrainResult(net, best_net, best_epoch, history)


def predict_smoothed(probability_history) -> int:
    """Class with the highest summed probability; ties go to the lower index."""
    hist = np.asarray(probability_history, dtype=np.float64)
    if hist.size == 0:
        raise EmptyHistory("no per-frame predictions to smooth")
    return int(np.argmax(hist.reshape(-1, hist.shape[-1]).sum(axis=0)))
