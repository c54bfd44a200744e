"""Conv + batch-norm + ReLU unit, the repeated building block of the network.

Convolutions followed by a norm carry no bias (the norm's shift absorbs it);
standalone convolutions keep theirs. Each unit knows how to enumerate its
trainable tensors and its non-trainable buffers (running statistics) under a
dotted name prefix, which is what the optimizer and the checkpoint writer
consume.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .conv import ConvSpec, ConvWeights, apply_conv, init_separable, init_standard
from .tensor import BatchNormParams, Tensor, batch_norm, init_batch_norm, relu


@dataclass
class ConvBnUnit:
    conv: ConvWeights
    norm: Optional[BatchNormParams] = None
    act: bool = True


def init_unit(
    spec: ConvSpec,
    rng: np.random.Generator,
    *,
    separable: bool = False,
    norm: bool = True,
    act: bool = True,
    dtype=None,
) -> ConvBnUnit:
    if norm and spec.has_bias:
        spec = dataclasses.replace(spec, has_bias=False)
    conv = (init_separable if separable else init_standard)(spec, rng, dtype=dtype)
    bn = init_batch_norm(spec.out_channels, dtype=dtype) if norm else None
    return ConvBnUnit(conv=conv, norm=bn, act=act)


def run_unit(x: Tensor, unit: ConvBnUnit, training: bool) -> Tensor:
    y = apply_conv(x, unit.conv)
    if unit.norm is not None:
        y = batch_norm(y, unit.norm, training)
    return relu(y) if unit.act else y


def unit_parameters(unit: ConvBnUnit, prefix: str) -> list[tuple[str, Tensor]]:
    out = [(f"{prefix}.{name}", t) for name, t in unit.conv.tensors()]
    if unit.norm is not None:
        out.append((f"{prefix}.gamma", unit.norm.gamma))
        out.append((f"{prefix}.beta", unit.norm.beta))
    return out


def unit_buffers(unit: ConvBnUnit, prefix: str) -> list[tuple[str, np.ndarray]]:
    if unit.norm is None:
        return []
    return [
        (f"{prefix}.running_mean", unit.norm.running_mean),
        (f"{prefix}.running_var", unit.norm.running_var),
    ]
