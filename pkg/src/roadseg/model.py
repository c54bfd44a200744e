"""Encoder-decoder segmentation model with two feature taps.

The encoder is a small separable-conv backbone: a stride-2 stem followed by
three blocks of depthwise-separable conv-bn-relu units, each block opening
with its stride. Features are tapped twice — early at stride 4 (fine spatial
detail) and late at stride 16 (context). The stride-16 features pass through
a multi-rate pyramid (dense cascade by default, parallel branches for the
baseline), come back up to stride 4, and are concatenated with a 1x1-projected
copy of the early tap. Channel attention reweights that concatenation, two
3x3 conv-bn-relu layers fuse it, a 1x1 head maps to class logits, and a final
bilinear x4 plus sigmoid produces a full-resolution probability map in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .attention import SEWeights, init_se, se_forward, se_parameters
from .blocks import ConvBnUnit, init_unit, run_unit, unit_buffers, unit_parameters
from .conv import ConvSpec, ConvWeights, apply_conv, init_standard
from .errors import ConfigError, DomainError, ShapeError
from .pyramid import (
    DenseCascadeConfig,
    DenseCascadeWeights,
    ParallelPyramidConfig,
    ParallelPyramidWeights,
    dense_cascade,
    dense_cascade_buffers,
    dense_cascade_parameters,
    init_dense_cascade,
    init_parallel_pyramid,
    parallel_pyramid,
    parallel_pyramid_buffers,
    parallel_pyramid_parameters,
)
from .tensor import Tensor, bilinear_upsample, concat_channels, sigmoid

PyramidConfig = Union[DenseCascadeConfig, ParallelPyramidConfig]


@dataclass(frozen=True)
class BackboneConfig:
    """Stem + blocks of (separable-unit count, out_channels, stride) triples.

    Two taps are declared by block index; the cumulative stride at each tap
    (stem stride 2 times all block strides so far) must equal the declared
    output strides.
    """

    stem_channels: int = 32
    blocks: tuple[tuple[int, int, int], ...] = ((2, 32, 2), (2, 64, 2), (2, 128, 2))
    low_tap_index: int = 0
    high_tap_index: int = 2
    low_output_stride: int = 4
    high_output_stride: int = 16
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        if self.stem_channels < 1 or self.in_channels < 1:
            raise ConfigError("stem_channels and in_channels must be >= 1")
        if not self.blocks:
            raise ConfigError("backbone needs at least one block")
        for b in self.blocks:
            if len(b) != 3 or b[0] < 1 or b[1] < 1 or b[2] < 1:
                raise ConfigError(f"block triple must be (count>=1, channels>=1, stride>=1), got {b}")
        if not (0 <= self.low_tap_index < self.high_tap_index < len(self.blocks)):
            raise ConfigError(
                f"taps must satisfy 0 <= low {self.low_tap_index} < high {self.high_tap_index} "
                f"< block count {len(self.blocks)}"
            )
        if self.stride_after_block(self.low_tap_index) != self.low_output_stride:
            raise ConfigError(
                f"low tap sits at stride {self.stride_after_block(self.low_tap_index)}, "
                f"declared {self.low_output_stride}"
            )
        if self.stride_after_block(self.high_tap_index) != self.high_output_stride:
            raise ConfigError(
                f"high tap sits at stride {self.stride_after_block(self.high_tap_index)}, "
                f"declared {self.high_output_stride}"
            )

    def stride_after_block(self, index: int) -> int:
        s = 2  # stem
        for count_, _, stride in self.blocks[: index + 1]:
            s *= stride
        return s

    def block_channels(self, index: int) -> int:
        return self.blocks[index][1]


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pyramid: PyramidConfig = field(default_factory=DenseCascadeConfig)
    se_reduction: int = 16
    decoder_channels: int = 256
    low_proj_channels: int = 48
    num_classes: int = 1

    def __post_init__(self):
        if self.se_reduction < 1 or self.decoder_channels < 1 or self.low_proj_channels < 1:
            raise ConfigError("se_reduction, decoder_channels, low_proj_channels must be >= 1")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        bb = self.backbone
        if bb.high_output_stride % bb.low_output_stride != 0:
            raise ConfigError(
                f"high stride {bb.high_output_stride} must be a multiple of low {bb.low_output_stride}"
            )

    @property
    def mid_upsample(self) -> int:
        """Pyramid output -> low-tap resolution."""
        return self.backbone.high_output_stride // self.backbone.low_output_stride

    @property
    def final_upsample(self) -> int:
        """Decoder resolution -> input resolution."""
        return self.backbone.low_output_stride

    @property
    def concat_width(self) -> int:
        return self.pyramid.out_channels + self.low_proj_channels


def toy_config(pyramid: str = "dense") -> ModelConfig:
    """Small configuration for fast CPU experiments on 64x64 inputs."""
    backbone = BackboneConfig(
        stem_channels=16, blocks=((2, 16, 2), (2, 32, 2), (2, 64, 2)),
    )
    if pyramid == "dense":
        pyr: PyramidConfig = DenseCascadeConfig(
            dilation_rates=(3, 6, 12), growth_channels=8, projection_channels=32
        )
    elif pyramid == "parallel":
        pyr = ParallelPyramidConfig(dilation_rates=(3, 6, 12), branch_channels=32)
    else:
        raise ConfigError(f"unknown pyramid kind {pyramid!r} (dense|parallel)")
    return ModelConfig(
        backbone=backbone, pyramid=pyr, se_reduction=2, decoder_channels=64
    )


# -- weights ------------------------------------------------------------------


@dataclass
class BackboneWeights:
    stem: ConvBnUnit
    blocks: list[list[ConvBnUnit]]


@dataclass
class ModelWeights:
    backbone: BackboneWeights
    pyramid: Union[DenseCascadeWeights, ParallelPyramidWeights]
    low_proj: ConvBnUnit
    se: SEWeights
    decoder1: ConvBnUnit
    decoder2: ConvBnUnit
    head: ConvWeights


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator, dtype=None) -> BackboneWeights:
    stem = init_unit(
        ConvSpec(3, cfg.in_channels, cfg.stem_channels, stride=2, padding=1), rng, dtype=dtype
    )
    blocks = []
    channels = cfg.stem_channels
    for count, out_channels, stride in cfg.blocks:
        units = []
        for u in range(count):
            # the block's stride lives in its first unit; the rest keep resolution
            s = stride if u == 0 else 1
            units.append(
                init_unit(
                    ConvSpec(3, channels, out_channels, stride=s, padding=1),
                    rng, separable=True, dtype=dtype,
                )
            )
            channels = out_channels
        blocks.append(units)
    return BackboneWeights(stem=stem, blocks=blocks)


def init_model(cfg: ModelConfig, seed: int, dtype=None) -> ModelWeights:
    """Deterministic initialization: one generator, fixed traversal order."""
    rng = np.random.default_rng(seed)
    backbone = init_backbone(cfg.backbone, rng, dtype=dtype)
    high_channels = cfg.backbone.block_channels(cfg.backbone.high_tap_index)
    low_channels = cfg.backbone.block_channels(cfg.backbone.low_tap_index)
    if isinstance(cfg.pyramid, DenseCascadeConfig):
        pyramid: Union[DenseCascadeWeights, ParallelPyramidWeights] = init_dense_cascade(
            cfg.pyramid, high_channels, rng, dtype=dtype
        )
    else:
        pyramid = init_parallel_pyramid(cfg.pyramid, high_channels, rng, dtype=dtype)
    low_proj = init_unit(ConvSpec(1, low_channels, cfg.low_proj_channels), rng, dtype=dtype)
    se = init_se(cfg.concat_width, cfg.se_reduction, rng, dtype=dtype)
    decoder1 = init_unit(
        ConvSpec(3, cfg.concat_width, cfg.decoder_channels, padding=1), rng, dtype=dtype
    )
    decoder2 = init_unit(
        ConvSpec(3, cfg.decoder_channels, cfg.decoder_channels, padding=1), rng, dtype=dtype
    )
    head = init_standard(ConvSpec(1, cfg.decoder_channels, cfg.num_classes), rng, dtype=dtype)
    return ModelWeights(
        backbone=backbone, pyramid=pyramid, low_proj=low_proj,
        se=se, decoder1=decoder1, decoder2=decoder2, head=head,
    )


# -- forwards -----------------------------------------------------------------


def backbone_forward(
    x: Tensor, cfg: BackboneConfig, weights: BackboneWeights, training: bool = False
) -> tuple[Tensor, Tensor]:
    """Returns (low, high) feature taps at the declared output strides."""
    n, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ShapeError(f"backbone expects {cfg.in_channels} input channels, got {c}")
    if h % cfg.high_output_stride or w % cfg.high_output_stride:
        raise ShapeError(
            f"input {h}x{w} not divisible by output stride {cfg.high_output_stride}"
        )
    y = run_unit(x, weights.stem, training)
    low = high = None
    for i, units in enumerate(weights.blocks):
        for unit in units:
            y = run_unit(y, unit, training)
        if i == cfg.low_tap_index:
            low = y
        if i == cfg.high_tap_index:
            high = y
    assert low is not None and high is not None
    return low, high


def _pyramid_forward(x, cfg: ModelConfig, weights: ModelWeights, training: bool) -> Tensor:
    if isinstance(cfg.pyramid, DenseCascadeConfig):
        return dense_cascade(x, cfg.pyramid, weights.pyramid, training)
    return parallel_pyramid(x, cfg.pyramid, weights.pyramid, training)


def model_forward(
    x: Tensor, cfg: ModelConfig, weights: ModelWeights, training: bool = False
) -> Tensor:
    """Full pipeline; output (n, num_classes, h, w) with every value in (0, 1).

    Shape or domain failures are re-raised with the pipeline stage prepended,
    so a mismatched config points at the stage that broke.
    """
    stage = "backbone"
    try:
        low, high = backbone_forward(x, cfg.backbone, weights.backbone, training)
        stage = "pyramid"
        context = _pyramid_forward(high, cfg, weights, training)
        stage = "upsample-to-low"
        context = bilinear_upsample(context, cfg.mid_upsample)
        stage = "low-projection"
        detail = run_unit(low, weights.low_proj, training)
        stage = "decoder-concat"
        fused = concat_channels([context, detail])
        stage = "attention"
        fused = se_forward(fused, weights.se)
        stage = "decoder"
        fused = run_unit(fused, weights.decoder1, training)
        fused = run_unit(fused, weights.decoder2, training)
        stage = "head"
        logits = apply_conv(fused, weights.head)
        stage = "output-upsample"
        return sigmoid(bilinear_upsample(logits, cfg.final_upsample))
    except (ShapeError, DomainError) as err:
        raise type(err)(f"{stage}: {err}") from err


# -- parameter / buffer enumeration -------------------------------------------


def backbone_parameters(w: BackboneWeights, prefix: str = "backbone"):
    out = unit_parameters(w.stem, f"{prefix}.stem")
    for i, units in enumerate(w.blocks):
        for j, unit in enumerate(units):
            out += unit_parameters(unit, f"{prefix}.block{i}.unit{j}")
    return out


def backbone_buffers(w: BackboneWeights, prefix: str = "backbone"):
    out = unit_buffers(w.stem, f"{prefix}.stem")
    for i, units in enumerate(w.blocks):
        for j, unit in enumerate(units):
            out += unit_buffers(unit, f"{prefix}.block{i}.unit{j}")
    return out


def model_parameters(w: ModelWeights) -> list[tuple[str, Tensor]]:
    out = backbone_parameters(w.backbone)
    if isinstance(w.pyramid, DenseCascadeWeights):
        out += dense_cascade_parameters(w.pyramid, "pyramid")
    else:
        out += parallel_pyramid_parameters(w.pyramid, "pyramid")
    out += unit_parameters(w.low_proj, "low_proj")
    out += se_parameters(w.se, "se")
    out += unit_parameters(w.decoder1, "decoder1")
    out += unit_parameters(w.decoder2, "decoder2")
    out += [(f"head.{name}", t) for name, t in w.head.tensors()]
    return out


def model_buffers(w: ModelWeights) -> list[tuple[str, np.ndarray]]:
    out = backbone_buffers(w.backbone)
    if isinstance(w.pyramid, DenseCascadeWeights):
        out += dense_cascade_buffers(w.pyramid, "pyramid")
    else:
        out += parallel_pyramid_buffers(w.pyramid, "pyramid")
    out += unit_buffers(w.low_proj, "low_proj")
    out += unit_buffers(w.decoder1, "decoder1")
    out += unit_buffers(w.decoder2, "decoder2")
    return out


def count_parameters(cfg: ModelConfig) -> int:
    """Exact trainable scalar count for a configuration."""
    weights = init_model(cfg, seed=0)
    return sum(t.size for _, t in model_parameters(weights))


@dataclass
class Model:
    """Config + weights bundle; the unit the trainer and CLI pass around."""

    config: ModelConfig
    weights: ModelWeights

    @staticmethod
    def build(cfg: ModelConfig, seed: int, dtype=None) -> "Model":
        return Model(config=cfg, weights=init_model(cfg, seed, dtype=dtype))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return model_forward(x, self.config, self.weights, training)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return model_parameters(self.weights)

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return model_buffers(self.weights)
