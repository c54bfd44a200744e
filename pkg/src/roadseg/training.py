"""Epoch loop: shuffled minibatches, Adam updates, per-epoch metric rows.

Training metrics are tallied from the same forward passes that produce the
gradients (training mode, batch statistics); validation metrics come from a
separate eval-mode pass without graph recording. One seeded generator drives
all shuffling, so a (seed, data, config) triple fully determines the run,
including every byte of the history CSV.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import save_model
from .errors import ConfigError
from .losses import get_loss
from .metrics import ConfusionCounts, confusion, f1, iou, precision
from .optim import Adam, DecaySchedule
from .tensor import Tensor, no_grad

HISTORY_HEADER = "epoch,step,lr,loss,precision,f1,iou,val_precision,val_f1,val_iou"


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    step: int
    lr: float
    loss: float
    precision: float
    f1: float
    iou: float
    val_precision: float
    val_f1: float
    val_iou: float

    def csv(self) -> str:
        floats = (
            self.lr, self.loss, self.precision, self.f1, self.iou,
            self.val_precision, self.val_f1, self.val_iou,
        )
        return f"{self.epoch},{self.step}," + ",".join(f"{v:.10g}" for v in floats)


def format_history(rows: Sequence[HistoryRow]) -> str:
    return "\n".join([HISTORY_HEADER, *(r.csv() for r in rows)]) + "\n"


def write_history(path, rows: Sequence[HistoryRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_history(rows))


@dataclass
class TrainResult:
    history: list[HistoryRow]
    best_iou: float
    best_epoch: int
    monitored: str  # "val" when a validation split drove checkpointing, else "train"


def _stack(samples) -> tuple[Tensor, Tensor]:
    images = np.concatenate([s.image.data for s in samples], axis=0)
    masks = np.concatenate([s.mask.data for s in samples], axis=0)
    return Tensor(images), Tensor(masks)


def evaluate(model, samples, batch_size: int = 8, threshold: float = 0.5) -> ConfusionCounts:
    """Eval-mode confusion over a sample list, batched, no graph recording."""
    counts = ConfusionCounts()
    with no_grad():
        for at in range(0, len(samples), batch_size):
            x, y = _stack(samples[at : at + batch_size])
            pred = model.forward(x, training=False)
            counts = counts + confusion(pred, y, threshold)
    return counts


def train_model(
    model,
    train_samples,
    val_samples=(),
    *,
    epochs: int,
    batch_size: int,
    seed: int,
    loss: str = "bce",
    threshold: float = 0.5,
    schedule: Optional[DecaySchedule] = None,
    checkpoint_path=None,
    log: Optional[Callable[[HistoryRow], None]] = None,
) -> TrainResult:
    """Run the full loop; returns history plus the best monitored IoU.

    The best checkpoint (validation IoU when a validation set exists,
    training IoU otherwise) is written to checkpoint_path when given.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    if epochs < 1 or batch_size < 1:
        raise ConfigError(f"epochs {epochs} and batch_size {batch_size} must be >= 1")
    loss_fn = get_loss(loss)
    optimizer = Adam(model.parameters(), schedule)
    rng = np.random.default_rng(seed)
    n = len(train_samples)

    history: list[HistoryRow] = []
    best = -1.0
    best_epoch = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        running_loss = 0.0
        counts = ConfusionCounts()
        for at in range(0, n, batch_size):
            chunk = order[at : at + batch_size]
            x, y = _stack([train_samples[i] for i in chunk])
            optimizer.zero_grad()
            pred = model.forward(x, training=True)
            batch_loss = loss_fn(pred, y)
            batch_loss.backward()
            optimizer.step()
            running_loss += batch_loss.item() * len(chunk)
            counts = counts + confusion(pred, y, threshold)

        if val_samples:
            vc = evaluate(model, val_samples, batch_size=batch_size, threshold=threshold)
            val_p, val_f, val_i = precision(vc), f1(vc), iou(vc)
        else:
            val_p = val_f = val_i = float("nan")

        row = HistoryRow(
            epoch=epoch,
            step=optimizer.t,
            lr=optimizer.last_lr,
            loss=running_loss / n,
            precision=precision(counts),
            f1=f1(counts),
            iou=iou(counts),
            val_precision=val_p,
            val_f1=val_f,
            val_iou=val_i,
        )
        history.append(row)
        if log is not None:
            log(row)

        monitored_iou = val_i if val_samples else row.iou
        if monitored_iou > best:
            best = monitored_iou
            best_epoch = epoch
            if checkpoint_path is not None:
                save_model(checkpoint_path, model)

    return TrainResult(
        history=history,
        best_iou=best,
        best_epoch=best_epoch,
        monitored="val" if val_samples else "train",
    )
