"""Channel attention: squeeze (global pool), excite (gating net), scale.

Each channel is summarized by its spatial mean, a two-layer bias-free
bottleneck network turns those summaries into per-channel factors in (0, 1),
and the input is rescaled channel-by-channel. The gating weights are stored
as 1x1 convolution kernels, which is the same linear map as the matrix form
but keeps everything in NCHW.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import Tensor, global_avg_pool, he_uniform, relu, sigmoid
from .conv import pointwise_conv2d


@dataclass
class SEWeights:
    """Bias-free gating pair: reduce (c/r, c, 1, 1) then expand (c, c/r, 1, 1)."""

    reduce: Tensor
    expand: Tensor
    reduction: int

    @property
    def channels(self) -> int:
        return self.reduce.shape[1]


def se_hidden_channels(channels: int, reduction: int) -> int:
    """Bottleneck width of the gating network: ceil(channels / reduction)."""
    if channels < 1:
        raise DomainError(f"channels must be >= 1, got {channels}")
    if reduction < 1:
        raise DomainError(f"reduction must be >= 1, got {reduction}")
    return max(-(-channels // reduction), 1)


def init_se(channels: int, reduction: int, rng: np.random.Generator, dtype=None) -> SEWeights:
    hidden = se_hidden_channels(channels, reduction)
    return SEWeights(
        reduce=he_uniform(rng, (hidden, channels, 1, 1), fan_in=channels, dtype=dtype),
        expand=he_uniform(rng, (channels, hidden, 1, 1), fan_in=hidden, dtype=dtype),
        reduction=reduction,
    )


def squeeze(d: Tensor) -> Tensor:
    """Per-channel spatial mean: (n, c, h, w) -> (n, c, 1, 1)."""
    return global_avg_pool(d)


def excite(z: Tensor, w: SEWeights) -> Tensor:
    """Gating factors in (0, 1): sigmoid(expand @ relu(reduce @ z))."""
    n, c, h, wd = z.shape
    if (h, wd) != (1, 1):
        raise ShapeError(f"excite expects channel summaries (n, c, 1, 1), got {z.shape}")
    if c != w.channels:
        raise ShapeError(f"excite weights carry {w.channels} channels, input has {c}")
    return sigmoid(pointwise_conv2d(relu(pointwise_conv2d(z, w.reduce)), w.expand))


def scale(d: Tensor, e: Tensor) -> Tensor:
    """Multiply channel c of d by the scalar e[:, c]."""
    if e.shape != (d.shape[0], d.shape[1], 1, 1):
        raise ShapeError(f"scale factors {e.shape} do not match input {d.shape}")
    return d * e


def se_forward(d: Tensor, w: SEWeights) -> Tensor:
    """squeeze -> excite -> scale; output shape equals input shape."""
    return scale(d, excite(squeeze(d), w))


def se_parameters(w: SEWeights, prefix: str) -> list[tuple[str, Tensor]]:
    return [(f"{prefix}.reduce", w.reduce), (f"{prefix}.expand", w.expand)]
