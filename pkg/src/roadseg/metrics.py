"""Pixel confusion counts and the precision / F1 / IoU triple.

Counts are integer-exact and additive, so per-batch tallies reduce to the
global (micro) score by plain summation in any order. Every ratio falls back
to 1.0 when its denominator is zero — an empty prediction of an empty truth
is a perfect answer, not an undefined one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise DomainError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )


def confusion(pred: Tensor, target: Tensor, threshold: float = 0.5) -> ConfusionCounts:
    """Tally pixels with pred >= threshold as positive against a binary target."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    p = pred.data >= threshold
    t = target.data > 0.5
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
        tn=int(np.sum(~p & ~t)),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 1.0


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def micro(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    """Global pooling of per-item counts (the default averaging mode)."""
    out = ConfusionCounts()
    for c in counts:
        out = out + c
    return out


def macro_average(counts: Iterable[ConfusionCounts], metric) -> float:
    """Mean of a per-item metric; the alternative averaging mode."""
    values = [metric(c) for c in counts]
    if not values:
        raise DomainError("macro average of zero items")
    return float(np.mean(values))
