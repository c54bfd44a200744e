"""Training losses over probability maps: cross-entropy and overlap.

Both are implemented as single fused graph nodes — the analytic gradient of
the whole reduction is cheaper and better conditioned than composing it from
elementwise logs and divisions.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor, _node

BCE_EPS = 1e-7


def _check_pair(pred: Tensor, target: Tensor) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    t = target.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise DomainError("target must be strictly binary {0, 1}")
    return t


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    t = _check_pair(pred, target)
    raw = pred.data
    p = np.clip(raw, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    value = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    inside = (raw > BCE_EPS) & (raw < 1.0 - BCE_EPS)  # clamp kills gradient outside

    def vjp(g):
        coeff = g.reshape(()) / n
        return (np.where(inside, coeff * (p - t) / (p * (1.0 - p)), 0.0),)

    return _node(np.array(value).reshape(1, 1, 1, 1), (pred,), vjp)


def dice_loss(pred: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """1 - Dice overlap, smoothed; zero when prediction matches a binary target."""
    t = _check_pair(pred, target)
    p = pred.data
    inter = float((p * t).sum())
    total = float(p.sum() + t.sum())
    num = 2.0 * inter + smooth
    den = total + smooth
    value = 1.0 - num / den

    def vjp(g):
        coeff = g.reshape(())
        return (coeff * (num - 2.0 * t * den) / (den * den),)

    return _node(np.array(value).reshape(1, 1, 1, 1), (pred,), vjp)


def bce_dice_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Sum of the two; the usual compromise when overlap matters more than calibration."""
    return bce_loss(pred, target) + dice_loss(pred, target)


LOSSES = {"bce": bce_loss, "dice": dice_loss, "bce_dice": bce_dice_loss}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ConfigError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
