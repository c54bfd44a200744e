"""2-D convolutions: standard (with dilation), depthwise, pointwise, separable.

All convolutions are cross-correlations (no kernel flip) over NCHW tensors.
The fast path loops over the kernel taps — S*S strided slices, each reduced
with a BLAS tensordot — instead of looping over output pixels, and records
the exact adjoint for backprop. ``roadseg.reference`` holds the naive
implementations these are checked against.

Dilation spreads the taps: tap (i, j) reads input offset (i*d, j*d), so the
effective extent of an S-tap kernel grows to S + (S-1)(d-1) while the
parameter count stays S*S.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import DEFAULT_DTYPE, Tensor, _node, he_uniform


def same_padding(kernel_size: int, dilation: int = 1) -> int:
    """Padding that keeps spatial size fixed at stride 1. Odd kernels only."""
    if kernel_size % 2 == 0:
        raise DomainError(f"same padding needs an odd kernel, got {kernel_size}")
    if dilation < 1:
        raise DomainError(f"dilation must be >= 1, got {dilation}")
    return dilation * (kernel_size - 1) // 2


def receptive_field(kernel_size: int, dilation: int = 1) -> int:
    """One-layer receptive field: S + (S-1)(d-1) input positions per axis."""
    if kernel_size < 1 or dilation < 1:
        raise DomainError(f"kernel {kernel_size} / dilation {dilation} out of range")
    return kernel_size + (kernel_size - 1) * (dilation - 1)


def receptive_field_chain(layers: Sequence[tuple[int, int, int]]) -> int:
    """Receptive field of stacked layers given (kernel, dilation, stride) triples.

    Each layer widens the field by (extent - 1) times the product of all
    earlier strides.
    """
    field, jump = 1, 1
    for kernel, dilation, stride in layers:
        field += (receptive_field(kernel, dilation) - 1) * jump
        jump *= stride
    return field


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer."""

    kernel_size: int
    in_channels: int
    out_channels: int
    dilation: int = 1
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.kernel_size < 1:
            raise DomainError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise DomainError(f"channel counts must be >= 1, got {self.in_channels}/{self.out_channels}")
        if self.dilation < 1:
            raise DomainError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise DomainError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise DomainError(f"padding must be >= 0, got {self.padding}")

    @property
    def effective_extent(self) -> int:
        return (self.kernel_size - 1) * self.dilation + 1

    def out_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.effective_extent) // self.stride + 1

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return self.out_size(h), self.out_size(w)

    def with_same_padding(self) -> "ConvSpec":
        pad = same_padding(self.kernel_size, self.dilation)
        return ConvSpec(
            self.kernel_size, self.in_channels, self.out_channels,
            self.dilation, self.stride, pad, self.has_bias,
        )


@dataclass
class ConvWeights:
    """Parameter bundle for one layer, standard or separable.

    Standard layers fill ``standard``; separable layers fill ``depthwise``
    (cin, 1, k, k) and ``pointwise`` (cout, cin, 1, 1). Bias lives as
    (1, cout, 1, 1) so it broadcasts directly.
    """

    spec: ConvSpec
    standard: Optional[Tensor] = None
    depthwise: Optional[Tensor] = None
    pointwise: Optional[Tensor] = None
    bias: Optional[Tensor] = None

    @property
    def is_separable(self) -> bool:
        return self.depthwise is not None

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for name in ("standard", "depthwise", "pointwise", "bias"):
            t = getattr(self, name)
            if t is not None:
                out.append((name, t))
        return out


def init_standard(spec: ConvSpec, rng: np.random.Generator, dtype=None) -> ConvWeights:
    """He-uniform standard kernel; fan-in counts every tap of every input channel."""
    dt = dtype or DEFAULT_DTYPE
    k, cin, cout = spec.kernel_size, spec.in_channels, spec.out_channels
    w = he_uniform(rng, (cout, cin, k, k), fan_in=cin * k * k, dtype=dt)
    bias = Tensor.zeros((1, cout, 1, 1), requires_grad=True, dtype=dt) if spec.has_bias else None
    return ConvWeights(spec=spec, standard=w, bias=bias)


def init_separable(spec: ConvSpec, rng: np.random.Generator, dtype=None) -> ConvWeights:
    """He-uniform depthwise + pointwise pair for the same geometry."""
    dt = dtype or DEFAULT_DTYPE
    k, cin, cout = spec.kernel_size, spec.in_channels, spec.out_channels
    dw = he_uniform(rng, (cin, 1, k, k), fan_in=k * k, dtype=dt)
    pw = he_uniform(rng, (cout, cin, 1, 1), fan_in=cin, dtype=dt)
    bias = Tensor.zeros((1, cout, 1, 1), requires_grad=True, dtype=dt) if spec.has_bias else None
    return ConvWeights(spec=spec, depthwise=dw, pointwise=pw, bias=bias)


def _check_geometry(stride: int, padding: int, dilation: int) -> None:
    if dilation < 1:
        raise DomainError(f"dilation must be >= 1, got {dilation}")
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise DomainError(f"padding must be >= 0, got {padding}")


def _tap_slices(k: int, stride: int, dilation: int, oh: int, ow: int):
    """Input-window slices per kernel tap, for a padded input."""
    taps = []
    for di in range(k):
        si = slice(di * dilation, di * dilation + (oh - 1) * stride + 1, stride)
        for dj in range(k):
            sj = slice(dj * dilation, dj * dilation + (ow - 1) * stride + 1, stride)
            taps.append((di, dj, si, sj))
    return taps


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Standard dilated cross-correlation. w: (cout, cin, k, k)."""
    _check_geometry(stride, padding, dilation)
    n, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got {w.shape}")
    if cin_w != cin:
        raise ShapeError(f"input has {cin} channels but kernel expects {cin_w}")
    ext = (k - 1) * dilation + 1
    oh = (h + 2 * padding - ext) // stride + 1
    ow = (wd + 2 * padding - ext) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"input {h}x{wd} (pad {padding}) is smaller than the {ext}x{ext} kernel extent"
        )
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias shape {bias.shape} != (1, {cout}, 1, 1)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wd_arr = w.data
    taps = _tap_slices(k, stride, dilation, oh, ow)
    out = np.zeros((n, cout, oh, ow), dtype=x.data.dtype)
    for di, dj, si, sj in taps:
        out += np.tensordot(xp[:, :, si, sj], wd_arr[:, :, di, dj], axes=([1], [1])).transpose(0, 3, 1, 2)
    if bias is not None:
        out += bias.data

    def vjp(g):
        gw = np.empty_like(wd_arr)
        gxp = np.zeros_like(xp)
        for di, dj, si, sj in taps:
            patch = xp[:, :, si, sj]
            gw[:, :, di, dj] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
            gxp[:, :, si, sj] += np.tensordot(g, wd_arr[:, :, di, dj], axes=([1], [0])).transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + wd].copy() if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3), keepdims=True)

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out, parents, vjp)


def depthwise_conv2d(
    x: Tensor,
    w: Tensor,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Per-channel spatial filtering; channel c sees only filter c. w: (c, 1, k, k)."""
    _check_geometry(stride, padding, dilation)
    n, c, h, wd = x.shape
    cw, one, k, k2 = w.shape
    if one != 1 or k != k2:
        raise ShapeError(f"depthwise kernel must be (c, 1, k, k), got {w.shape}")
    if cw != c:
        raise ShapeError(f"input has {c} channels but depthwise kernel has {cw}")
    ext = (k - 1) * dilation + 1
    oh = (h + 2 * padding - ext) // stride + 1
    ow = (wd + 2 * padding - ext) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"input {h}x{wd} (pad {padding}) is smaller than the {ext}x{ext} kernel extent"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wd_arr = w.data
    taps = _tap_slices(k, stride, dilation, oh, ow)
    out = np.zeros((n, c, oh, ow), dtype=x.data.dtype)
    for di, dj, si, sj in taps:
        out += xp[:, :, si, sj] * wd_arr[:, 0, di, dj].reshape(1, c, 1, 1)

    def vjp(g):
        gw = np.empty_like(wd_arr)
        gxp = np.zeros_like(xp)
        for di, dj, si, sj in taps:
            gw[:, 0, di, dj] = (g * xp[:, :, si, sj]).sum(axis=(0, 2, 3))
            gxp[:, :, si, sj] += g * wd_arr[:, 0, di, dj].reshape(1, c, 1, 1)
        gx = gxp[:, :, padding:padding + h, padding:padding + wd].copy() if padding else gxp
        return gx, gw

    return _node(out, (x, w), vjp)


def pointwise_conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """1x1 channel mixing. w: (cout, cin, 1, 1)."""
    if w.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise kernel must be (cout, cin, 1, 1), got {w.shape}")
    return conv2d(x, w, bias)


def separable_conv2d(
    x: Tensor,
    depthwise: Tensor,
    pointwise: Tensor,
    bias: Optional[Tensor] = None,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Depthwise spatial stage, then pointwise mixing stage.

    All spatial behaviour (stride, padding, dilation) lives in the first
    stage; the 1x1 stage only recombines channels and adds the bias.
    """
    mid = depthwise_conv2d(x, depthwise, stride=stride, padding=padding, dilation=dilation)
    return pointwise_conv2d(mid, pointwise, bias)


def apply_conv(x: Tensor, weights: ConvWeights) -> Tensor:
    """Run a layer from its parameter bundle, honouring the spec geometry."""
    s = weights.spec
    if weights.is_separable:
        return separable_conv2d(
            x, weights.depthwise, weights.pointwise, weights.bias,
            stride=s.stride, padding=s.padding, dilation=s.dilation,
        )
    return conv2d(
        x, weights.standard, weights.bias,
        stride=s.stride, padding=s.padding, dilation=s.dilation,
    )
