"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value in this package is a ``Tensor``: a dense ``(batch, channels,
height, width)`` array with an optional gradient buffer. Operations record
a DAG (each result keeps references to its input tensors together with a
local gradient rule); ``Tensor.backward`` walks that record once, in
reverse topological order, and accumulates gradients into every tensor
that requires them. Gradients accumulate across backward passes until
``zero_grad`` is called.

Thread-safety: tensors are immutable after creation except for ``grad``
(and parameter data mutated by an optimizer between steps). A recorded
graph and its tensors belong to one thread during ``backward``; independent
graphs may run on independent threads. There is no interior locking.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, GradError, ShapeError

DEFAULT_DTYPE = np.float64

_FLOAT_DTYPES = (np.float32, np.float64)


def set_default_dtype(dtype) -> None:
    """Select the dtype used for newly created tensors ('f32', 'f64', or a numpy dtype).

    Double precision is the default so finite-difference checks have
    headroom; switch to single precision for training speed.
    """
    global DEFAULT_DTYPE
    if dtype in ("f32", "float32"):
        DEFAULT_DTYPE = np.float32
    elif dtype in ("f64", "float64"):
        DEFAULT_DTYPE = np.float64
    elif np.dtype(dtype).type in _FLOAT_DTYPES:
        DEFAULT_DTYPE = np.dtype(dtype).type
    else:
        raise DomainError(f"unsupported dtype {dtype!r} (use f32 or f64)")


_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense (n, c, h, w) array with an optional gradient buffer.

    ``requires_grad`` marks tensors whose gradient should be kept; results
    of operations on such tensors carry the operation record needed by
    ``backward``. Zero-sized tensors are legal and propagate to zero-sized
    outputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOAT_DTYPES or dtype is not None:
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (n, c, h, w); got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def full(shape, value, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def scalar(value, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor.full((1, 1, 1, 1), value, requires_grad, dtype)

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same data with no gradient tracking."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- backward ------------------------------------------------------------

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(tensor) into every requires_grad tensor below.

        Without an explicit ``seed`` gradient, ``self`` must be scalar-shaped
        (a single element); this is the usual loss case. Gradients add to any
        existing buffers, so a second backward without ``zero_grad`` doubles
        them.
        """
        if seed is None:
            if self.data.size != 1:
                raise GradError(
                    f"backward on non-scalar shape {self.shape} requires a seed gradient"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise GradError(f"seed shape {seed.shape} does not match {self.shape}")

        order = topo_order(self)
        flow: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flow.get(id(parent))
                flow[id(parent)] = pg if acc is None else acc + pg

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def sum(self) -> "Tensor":
        """Reduce all elements to a (1, 1, 1, 1) scalar tensor."""
        shape = self.data.shape
        out = self.data.sum().reshape(1, 1, 1, 1)
        return _node(out, (self,), lambda g: (np.broadcast_to(g.reshape(()), shape),))

    def mean(self) -> "Tensor":
        if self.data.size == 0:
            raise DomainError("mean of a zero-sized tensor")
        return self.sum() * (1.0 / self.data.size)


def topo_order(root: Tensor) -> list[Tensor]:
    """Producers-before-consumers ordering of the operation record below root.

    Iterative DFS postorder; each recorded tensor appears exactly once, after
    all of its parents.
    """
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, iter]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if np.isscalar(value) or (isinstance(value, np.ndarray) and value.ndim == 0):
        return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))
    raise ShapeError(f"cannot combine a Tensor with {type(value).__name__}")


def _node(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    """Wrap an operation result, recording parents and the local gradient rule."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# -- elementwise operations ---------------------------------------------------


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Rank-4 broadcast: per axis, dims must match or one of them must be 1."""
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"shapes {a} and {b} do not broadcast")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    ash, bsh = a.shape, b.shape
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    ash, bsh = a.shape, b.shape
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for overflow-free evaluation
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


# -- structural operations ----------------------------------------------------


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; part k keeps a contiguous slab."""
    if len(parts) == 0:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        pn, _, ph, pw = p.shape
        if (pn, ph, pw) != (n, h, w):
            raise ShapeError(
                f"concat parts disagree outside the channel axis: {parts[0].shape} vs {p.shape}"
            )
    widths = [p.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[k]:offsets[k + 1]] for k in range(len(widths)))

    return _node(out, tuple(parts), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, shape (n, c, 1, 1)."""
    n, c, h, w = x.shape
    if h * w < 1:
        raise DomainError("global_avg_pool needs at least one spatial element")
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return _node(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.data.shape),))


def broadcast_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Tile a (n, c, 1, 1) tensor to (n, c, height, width)."""
    n, c, h, w = x.shape
    if (h, w) != (1, 1):
        raise ShapeError(f"broadcast_spatial needs 1x1 spatial input, got {x.shape}")
    out = np.broadcast_to(x.data, (n, c, height, width)).copy()
    return _node(out, (x,), lambda g: (g.sum(axis=(2, 3), keepdims=True),))


@functools.lru_cache(maxsize=None)
def _interp_matrix(size: int, factor: int) -> np.ndarray:
    """Row-stochastic 1-D interpolation matrix (size*factor, size).

    Sample centers follow the align-corners=false convention: output index i
    reads source coordinate (i + 0.5)/factor - 0.5, clamped at the borders.
    """
    out_size = size * factor
    m = np.zeros((out_size, size))
    for i in range(out_size):
        src = (i + 0.5) / factor - 0.5
        lo = int(np.floor(src))
        t = src - lo
        a = min(max(lo, 0), size - 1)
        b = min(max(lo + 1, 0), size - 1)
        m[i, a] += 1.0 - t
        m[i, b] += t
    m.setflags(write=False)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear interpolation to (h*factor, w*factor), align-corners=false."""
    if int(factor) != factor or factor < 1:
        raise DomainError(f"upsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    _, _, h, w = x.shape
    uh = _interp_matrix(h, factor).astype(x.dtype)
    uw = _interp_matrix(w, factor).astype(x.dtype)
    out = np.einsum("Oh,nchw,Pw->ncOP", uh, x.data, uw, optimize=True)

    def vjp(g):
        return (np.einsum("Oh,ncOP,Pw->nchw", uh, g, uw, optimize=True),)

    return _node(out, (x,), vjp)


# -- batch normalization -------------------------------------------------------


@dataclass
class BatchNormParams:
    """Learnable scale/shift plus running statistics for one channel axis.

    ``gamma``/``beta`` are (1, c, 1, 1) tensors; running statistics are plain
    (c,) arrays updated in place during training-mode forwards.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5


def init_batch_norm(channels: int, dtype=None, momentum: float = 0.9, eps: float = 1e-5) -> BatchNormParams:
    dt = dtype or DEFAULT_DTYPE
    return BatchNormParams(
        gamma=Tensor.ones((1, channels, 1, 1), requires_grad=True, dtype=dt),
        beta=Tensor.zeros((1, channels, 1, 1), requires_grad=True, dtype=dt),
        running_mean=np.zeros(channels, dtype=dt),
        running_var=np.ones(channels, dtype=dt),
        momentum=momentum,
        eps=eps,
    )


def batch_norm(x: Tensor, params: BatchNormParams, training: bool) -> Tensor:
    """Per-channel normalization with learnable scale and shift.

    Training mode normalizes by batch statistics (biased variance) and folds
    them into the running statistics with ``momentum``; eval mode normalizes
    by the running statistics. Training mode needs at least two values per
    channel, or the variance is undefined.
    """
    n, c, h, w = x.shape
    if params.gamma.shape[1] != c:
        raise ShapeError(f"batch_norm params carry {params.gamma.shape[1]} channels, input has {c}")
    gamma, beta = params.gamma, params.beta
    gd = gamma.data
    eps = params.eps

    if training:
        m = n * h * w
        if m < 2:
            raise DomainError(f"training-mode batch_norm needs batch*h*w >= 2, got {m}")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        mom = params.momentum
        params.running_mean[:] = mom * params.running_mean + (1.0 - mom) * mean
        params.running_var[:] = mom * params.running_var + (1.0 - mom) * var

        ivar = 1.0 / np.sqrt(var + eps)
        ivar4 = ivar.reshape(1, c, 1, 1)
        xhat = (x.data - mean.reshape(1, c, 1, 1)) * ivar4
        out = gd * xhat + beta.data

        def vjp(g):
            dxhat = g * gd
            # classic compact form for batch statistics (biased variance)
            dx = ivar4 * (
                dxhat
                - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            )
            dgamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dbeta = g.sum(axis=(0, 2, 3), keepdims=True)
            return dx, dgamma, dbeta

        return _node(out, (x, gamma, beta), vjp)

    rmean = params.running_mean.reshape(1, c, 1, 1)
    rivar = (1.0 / np.sqrt(params.running_var + eps)).reshape(1, c, 1, 1)
    xhat_e = (x.data - rmean) * rivar
    out = gd * xhat_e + beta.data

    def vjp_eval(g):
        return (
            g * gd * rivar,
            (g * xhat_e).sum(axis=(0, 2, 3), keepdims=True),
            g.sum(axis=(0, 2, 3), keepdims=True),
        )

    return _node(out, (x, gamma, beta), vjp_eval)


# -- initialization ------------------------------------------------------------


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Tensor:
    """He-uniform draw: U(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / max(fan_in, 1))
    data = rng.uniform(-limit, limit, size=shape).astype(dtype or DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)


def zero_grads(params) -> None:
    """Clear gradient buffers on an iterable of (name, Tensor) or Tensor."""
    for p in params:
        t = p[1] if isinstance(p, tuple) else p
        t.zero_grad()
