"""Multi-rate context aggregation over the encoder's high-level features.

Two interchangeable designs:

* ``parallel_pyramid`` — independent 3x3 dilated branches over the same
  input, concatenated and compressed by a 1x1 projection (the classic
  spatial-pyramid layout), optionally with a global-pooling branch.
* ``dense_cascade`` — a chain of depthwise-separable dilated layers with
  ascending rates, where layer l consumes the channel concatenation of the
  module input and every previous layer's output and emits ``growth_channels``
  new channels. The full concatenation (c_in + L*growth) is then compressed
  by a 1x1 projection. Later layers see earlier outputs, so receptive
  fields add up along the chain instead of maxing out at the largest rate.

Both preserve spatial dims (same padding) and batch/spatial layout, so a
model can swap one for the other without touching anything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocks import ConvBnUnit, init_unit, run_unit, unit_buffers, unit_parameters
from .conv import ConvSpec, receptive_field, receptive_field_chain
from .errors import ConfigError, ShapeError
from .tensor import Tensor, broadcast_spatial, concat_channels, global_avg_pool


def _check_rates(rates) -> tuple[int, ...]:
    rates = tuple(int(r) for r in rates)
    if not rates:
        raise ConfigError("dilation rate list is empty")
    if any(r < 1 for r in rates):
        raise ConfigError(f"dilation rates must be positive, got {rates}")
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise ConfigError(f"dilation rates must be strictly ascending, got {rates}")
    return rates


@dataclass(frozen=True)
class ParallelPyramidConfig:
    """Independent dilated branches; branch_channels each, projected back to branch_channels."""

    dilation_rates: tuple[int, ...] = (6, 12, 18, 24)
    branch_channels: int = 256
    include_image_pooling: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dilation_rates", _check_rates(self.dilation_rates))
        if self.branch_channels < 1:
            raise ConfigError(f"branch_channels must be >= 1, got {self.branch_channels}")

    @property
    def out_channels(self) -> int:
        return self.branch_channels

    def concat_channels(self) -> int:
        n = len(self.dilation_rates) + (1 if self.include_image_pooling else 0)
        return self.branch_channels * n


@dataclass(frozen=True)
class DenseCascadeConfig:
    """Ascending-rate separable cascade; growth_channels per layer, then 1x1 projection."""

    dilation_rates: tuple[int, ...] = (3, 6, 12, 18)
    growth_channels: int = 64
    projection_channels: int = 256

    def __post_init__(self):
        object.__setattr__(self, "dilation_rates", _check_rates(self.dilation_rates))
        if self.growth_channels < 1:
            raise ConfigError(f"growth_channels must be >= 1, got {self.growth_channels}")
        if self.projection_channels < 1:
            raise ConfigError(f"projection_channels must be >= 1, got {self.projection_channels}")

    @property
    def out_channels(self) -> int:
        return self.projection_channels

    def concat_channels(self, in_channels: int) -> int:
        """Channel count entering the projection: c_in + L * growth."""
        return in_channels + len(self.dilation_rates) * self.growth_channels

    def layer_in_channels(self, layer: int, in_channels: int) -> int:
        """Channel count entering cascade layer `layer` (0-based): c_in + layer * growth."""
        return in_channels + layer * self.growth_channels


# -- receptive fields ---------------------------------------------------------


def cascade_receptive_field(cfg: DenseCascadeConfig) -> int:
    """Deepest-path receptive field: 1 + sum of (3x3 extent - 1) per layer."""
    return receptive_field_chain([(3, d, 1) for d in cfg.dilation_rates])


def parallel_receptive_field(cfg: ParallelPyramidConfig) -> int:
    """Widest single branch: parallel branches never compose."""
    return max(receptive_field(3, d) for d in cfg.dilation_rates)


# -- weights ------------------------------------------------------------------


@dataclass
class ParallelPyramidWeights:
    in_channels: int
    branches: list[ConvBnUnit] = field(default_factory=list)
    image_pool: Optional[ConvBnUnit] = None
    projection: Optional[ConvBnUnit] = None


@dataclass
class DenseCascadeWeights:
    in_channels: int
    layers: list[ConvBnUnit] = field(default_factory=list)
    projection: Optional[ConvBnUnit] = None


def init_parallel_pyramid(
    cfg: ParallelPyramidConfig, in_channels: int, rng: np.random.Generator, dtype=None
) -> ParallelPyramidWeights:
    branches = [
        init_unit(
            ConvSpec(3, in_channels, cfg.branch_channels, dilation=d).with_same_padding(),
            rng, dtype=dtype,
        )
        for d in cfg.dilation_rates
    ]
    pool = None
    if cfg.include_image_pooling:
        # norm-free: batch statistics over a 1x1 map are undefined for batch size 1
        pool = init_unit(ConvSpec(1, in_channels, cfg.branch_channels), rng, norm=False, dtype=dtype)
    projection = init_unit(
        ConvSpec(1, cfg.concat_channels(), cfg.branch_channels), rng, dtype=dtype
    )
    return ParallelPyramidWeights(
        in_channels=in_channels, branches=branches, image_pool=pool, projection=projection
    )


def init_dense_cascade(
    cfg: DenseCascadeConfig, in_channels: int, rng: np.random.Generator, dtype=None
) -> DenseCascadeWeights:
    layers = [
        init_unit(
            ConvSpec(
                3, cfg.layer_in_channels(l, in_channels), cfg.growth_channels, dilation=d
            ).with_same_padding(),
            rng, separable=True, dtype=dtype,
        )
        for l, d in enumerate(cfg.dilation_rates)
    ]
    projection = init_unit(
        ConvSpec(1, cfg.concat_channels(in_channels), cfg.projection_channels), rng, dtype=dtype
    )
    return DenseCascadeWeights(in_channels=in_channels, layers=layers, projection=projection)


# -- forwards -----------------------------------------------------------------


def parallel_pyramid(
    x: Tensor, cfg: ParallelPyramidConfig, weights: ParallelPyramidWeights, training: bool = False
) -> Tensor:
    """Each branch reads the same input; outputs concatenate, then 1x1-project."""
    if x.shape[1] != weights.in_channels:
        raise ShapeError(f"pyramid built for {weights.in_channels} channels, input has {x.shape[1]}")
    outs = [run_unit(x, branch, training) for branch in weights.branches]
    if weights.image_pool is not None:
        pooled = run_unit(global_avg_pool(x), weights.image_pool, training)
        outs.append(broadcast_spatial(pooled, x.shape[2], x.shape[3]))
    return run_unit(concat_channels(outs), weights.projection, training)


def dense_cascade_concat(
    x: Tensor, cfg: DenseCascadeConfig, weights: DenseCascadeWeights, training: bool = False
) -> Tensor:
    """The pre-projection feature map: [layer_L, ..., layer_1, x] along channels."""
    if x.shape[1] != weights.in_channels:
        raise ShapeError(f"cascade built for {weights.in_channels} channels, input has {x.shape[1]}")
    if len(weights.layers) != len(cfg.dilation_rates):
        raise ShapeError(
            f"cascade has {len(weights.layers)} layers but config lists {len(cfg.dilation_rates)} rates"
        )
    feats = [x]  # newest output is prepended, so the input stays in the last slab
    for unit in weights.layers:
        y = run_unit(concat_channels(feats), unit, training)
        feats.insert(0, y)
    return concat_channels(feats)


def dense_cascade(
    x: Tensor, cfg: DenseCascadeConfig, weights: DenseCascadeWeights, training: bool = False
) -> Tensor:
    """Full module: growing concatenation, then 1x1 projection with norm and ReLU."""
    full = dense_cascade_concat(x, cfg, weights, training)
    return run_unit(full, weights.projection, training)


# -- parameter enumeration ----------------------------------------------------


def parallel_pyramid_parameters(w: ParallelPyramidWeights, prefix: str):
    out = []
    for i, b in enumerate(w.branches):
        out += unit_parameters(b, f"{prefix}.branch{i}")
    if w.image_pool is not None:
        out += unit_parameters(w.image_pool, f"{prefix}.pool")
    out += unit_parameters(w.projection, f"{prefix}.projection")
    return out


def parallel_pyramid_buffers(w: ParallelPyramidWeights, prefix: str):
    out = []
    for i, b in enumerate(w.branches):
        out += unit_buffers(b, f"{prefix}.branch{i}")
    if w.image_pool is not None:
        out += unit_buffers(w.image_pool, f"{prefix}.pool")
    out += unit_buffers(w.projection, f"{prefix}.projection")
    return out


def dense_cascade_parameters(w: DenseCascadeWeights, prefix: str):
    out = []
    for i, layer in enumerate(w.layers):
        out += unit_parameters(layer, f"{prefix}.layer{i}")
    out += unit_parameters(w.projection, f"{prefix}.projection")
    return out


def dense_cascade_buffers(w: DenseCascadeWeights, prefix: str):
    out = []
    for i, layer in enumerate(w.layers):
        out += unit_buffers(layer, f"{prefix}.layer{i}")
    out += unit_buffers(w.projection, f"{prefix}.projection")
    return out
