"""Slow, obviously-correct reference implementations used to check the fast paths.

Everything here is plain numpy with explicit loops: naive convolutions for
cross-checking the vectorized kernels, zero-stuffed kernel expansion for the
dilation equivalence, and central-difference numeric gradients for checking
the recorded gradient rules. Nothing in this module touches the autograd
machinery, so agreement is meaningful.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import DomainError


def conv_out_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    ext = (kernel - 1) * dilation + 1
    return (size + 2 * padding - ext) // stride + 1


def dilated_conv_naive(
    x: np.ndarray,
    w: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> np.ndarray:
    """Standard cross-correlation, one output element at a time.

    x: (n, cin, h, w); w: (cout, cin, k, k); bias: (cout,) or None.
    Output position (i, j) reads input (i*stride + di*dilation, ...) over taps.
    """
    n, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    assert cin == cin_w and k == k2
    oh = conv_out_size(h, k, stride, padding, dilation)
    ow = conv_out_size(wd, k, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for di in range(k):
                            for dj in range(k):
                                acc += (
                                    xp[b, ci, i * stride + di * dilation, j * stride + dj * dilation]
                                    * w[co, ci, di, dj]
                                )
                    out[b, co, i, j] = acc
            if bias is not None:
                out[b, co] += bias[co]
    return out


def depthwise_conv_naive(
    x: np.ndarray,
    w: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> np.ndarray:
    """Per-channel spatial filtering: channel c convolves only with filter c.

    x: (n, c, h, w); w: (c, 1, k, k). No cross-channel mixing, no bias.
    """
    n, c, h, wd = x.shape
    cw, one, k, k2 = w.shape
    assert cw == c and one == 1 and k == k2
    oh = conv_out_size(h, k, stride, padding, dilation)
    ow = conv_out_size(wd, k, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for b in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for di in range(k):
                        for dj in range(k):
                            acc += (
                                xp[b, ci, i * stride + di * dilation, j * stride + dj * dilation]
                                * w[ci, 0, di, dj]
                            )
                    out[b, ci, i, j] = acc
    return out


def pointwise_conv_naive(x: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """1x1 channel mixing. x: (n, cin, h, w); w: (cout, cin, 1, 1)."""
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    out = np.zeros((n, cout, h, wd), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            for ci in range(cin):
                out[b, co] += x[b, ci] * w[co, ci, 0, 0]
            if bias is not None:
                out[b, co] += bias[co]
    return out


def separable_conv_naive(
    x: np.ndarray,
    dw: np.ndarray,
    pw: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> np.ndarray:
    """Depthwise spatial stage followed by pointwise mixing stage."""
    mid = depthwise_conv_naive(x, dw, stride=stride, padding=padding, dilation=dilation)
    return pointwise_conv_naive(mid, pw, bias)


def zero_stuff(w: np.ndarray, dilation: int) -> np.ndarray:
    """Expand a (..., k, k) kernel by inserting dilation-1 zero rows/cols between taps.

    A dilation-d convolution with kernel w equals a dilation-1 convolution
    with zero_stuff(w, d).
    """
    if dilation < 1:
        raise DomainError(f"dilation must be >= 1, got {dilation}")
    k = w.shape[-1]
    big = (k - 1) * dilation + 1
    out = np.zeros(w.shape[:-2] + (big, big), dtype=w.dtype)
    out[..., ::dilation, ::dilation] = w
    return out


# -- numeric gradients --------------------------------------------------------


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar-valued f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def numeric_grad_at(
    f: Callable[[np.ndarray], float], x: np.ndarray, indices, step: float = 1e-4
) -> np.ndarray:
    """Central differences at selected flat indices only (for large tensors)."""
    flat = x.reshape(-1)
    out = np.zeros(len(indices), dtype=np.float64)
    for k, i in enumerate(indices):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        out[k] = (hi - lo) / (2.0 * step)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise |a - b| / (|a| + |b| + 1e-8); symmetric and zero-safe."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8)


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(rel_err(a, b).max()) if np.asarray(a).size else 0.0
