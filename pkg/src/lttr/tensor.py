"""Dense float64 tensors with reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to per-parent gradients.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates ``.grad`` on leaves that require it.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

LN_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    # make ndarray <op> Tensor defer to the Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph ------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() needs an explicit gradient for shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor carrying a checkpoint name."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def grad_enabled() -> bool:
    """False inside a :class:`no_grad` block."""
    return _grad_enabled


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where clamping is active."""
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} x {weight.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), weight)
    if bias is not None:
        y = add(y, bias)
    return reshape(y, lead + (weight.shape[1],))


# -- reductions -------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm affine {gain.shape}/{bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gain, bias), backward)


def channel_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize every channel (last axis) over all spatial positions, then scale and shift."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"channel_norm affine {gain.shape}/{bias.shape} vs input {x.shape}")
    axes = tuple(range(x.ndim - 1))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gain, bias), backward)


# -- shape ops --------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradients scatter back with accumulation."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def unfold_blocks(x: Tensor, block: Sequence[int]) -> Tensor:
    """Split the leading spatial axes of ``x`` into non-overlapping blocks.

    ``x`` has shape ``(*spatial, C)``.  Returns ``(n_blocks, prod(block) * C)``
    with blocks in row-major order and each block flattened row-major.
    """
    spatial, channels = x.shape[:-1], x.shape[-1]
    if len(block) != len(spatial) or any(n % b for n, b in zip(spatial, block)):
        raise DimensionError(f"block {tuple(block)} does not tile {spatial}")
    k = len(spatial)
    split = []
    for n, b in zip(spatial, block):
        split += [n // b, b]
    y = reshape(x, tuple(split) + (channels,))
    perm = tuple(range(0, 2 * k, 2)) + tuple(range(1, 2 * k, 2)) + (2 * k,)
    y = transpose(y, perm)
    n_blocks = int(np.prod([n // b for n, b in zip(spatial, block)]))
    return reshape(y, (n_blocks, -1))


def fold_blocks(cols: Tensor, spatial: Sequence[int], block: Sequence[int], channels: int) -> Tensor:
    """Inverse of :func:`unfold_blocks`."""
    k = len(spatial)
    if any(n % b for n, b in zip(spatial, block)):
        raise DimensionError(f"block {tuple(block)} does not tile {tuple(spatial)}")
    counts = [n // b for n, b in zip(spatial, block)]
    y = reshape(cols, tuple(counts) + tuple(block) + (channels,))
    perm = []
    for i in range(k):
        perm += [i, k + i]
    y = transpose(y, tuple(perm) + (2 * k,))
    return reshape(y, tuple(spatial) + (channels,))


# -- convolution ------------------------------------------------------------

IM2COL_LIMIT = 20_000_000
SPARSE_FRACTION = 0.05


_PAIR_CACHE: "OrderedDict[tuple, list]" = OrderedDict()
PAIR_CACHE_SIZE = 64


def _sparse_pairs(occupied, in_sp, out_sp, offsets, stride, padding):
    """For each kernel offset: (rows of occupied inputs that land on an output, output indices).

    The pairs depend only on the occupancy pattern and the geometry, so a small
    cache serves repeated passes over the same grid.
    """
    key = (occupied.tobytes(), tuple(in_sp), tuple(out_sp), tuple(offsets), stride, padding)
    hit = _PAIR_CACHE.get(key)
    if hit is not None:
        _PAIR_CACHE.move_to_end(key)
        return hit
    coords = np.stack(np.unravel_index(occupied, in_sp), axis=1)
    o = coords[None] + padding - np.array(offsets)[:, None]
    ok = np.all((o >= 0) & (o < np.array(out_sp) * stride) & (o % stride == 0), axis=2)
    flat = np.ravel_multi_index(tuple(np.moveaxis(np.clip(o // stride, 0, np.array(out_sp) - 1), -1, 0)), out_sp)
    pairs = []
    for k in range(len(offsets)):
        rows = np.flatnonzero(ok[k])
        pairs.append((rows, flat[k, rows]))
    _PAIR_CACHE[key] = pairs
    if len(_PAIR_CACHE) > PAIR_CACHE_SIZE:
        _PAIR_CACHE.popitem(last=False)
    return pairs


def conv(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
         padding: int = 0, occupied: np.ndarray | None = None) -> Tensor:
    """Channels-last N-d convolution (cross-correlation), no batch axis.

    ``x``: ``(*spatial, C_in)``; ``weight``: ``(*kernel, C_in, C_out)``.
    Inputs that need no gradient and are mostly empty are convolved by
    scattering only the occupied positions (flat indices in ``occupied``,
    detected when not given).
    """
    nd = x.ndim - 1
    kernel = weight.shape[:nd]
    if weight.ndim != nd + 2 or weight.shape[nd] != x.shape[-1]:
        raise DimensionError(f"conv weight {weight.shape} incompatible with input {x.shape}")
    out_sp = tuple((x.shape[d] + 2 * padding - kernel[d]) // stride + 1 for d in range(nd))
    if any(n <= 0 for n in out_sp):
        raise DimensionError(f"conv output would be empty for input {x.shape}")
    c_in, c_out = weight.shape[nd], weight.shape[nd + 1]
    n_out = int(np.prod(out_sp))
    n_k = int(np.prod(kernel))
    offsets = list(itertools.product(*[range(k) for k in kernel]))
    w_mat = weight.data.reshape(n_k * c_in, c_out)

    def window(arr, off):
        return arr[tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out_sp))]

    cols = sparse = None
    if not x.requires_grad and x.size:
        if occupied is None:
            occupied = np.flatnonzero(x.data.reshape(-1, c_in).any(axis=1))
        if occupied.size <= SPARSE_FRACTION * (x.size // c_in):
            sparse = _sparse_pairs(occupied, x.shape[:-1], out_sp, offsets, stride, padding)
            feats = x.data.reshape(-1, c_in)[occupied]
    if sparse is None:
        if padding:
            xp = np.zeros(tuple(n + 2 * padding for n in x.shape[:-1]) + (c_in,))
            xp[tuple(slice(padding, padding + n) for n in x.shape[:-1])] = x.data
        else:
            xp = x.data
    if sparse is not None:
        acc = np.zeros((n_out, c_out))
        for off, (rows, out_idx) in zip(offsets, sparse):
            acc[out_idx] += feats[rows] @ weight.data[off]
    elif n_out * n_k * c_in <= IM2COL_LIMIT:
        view = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=tuple(range(nd)))
        view = view[tuple(slice(None, None, stride) for _ in range(nd))]
        view = view[tuple(slice(0, n) for n in out_sp)]
        # (*out, C, *k) -> (*out, *k, C)
        perm = tuple(range(nd)) + tuple(range(nd + 1, 2 * nd + 1)) + (nd,)
        cols = np.transpose(view, perm).reshape(n_out, n_k * c_in)
        acc = cols @ w_mat
    else:
        acc = np.zeros((n_out, c_out))
        for off in offsets:
            acc += window(xp, off).reshape(-1, c_in) @ weight.data[off]
    if bias is not None:
        acc += bias.data
    out = acc.reshape(out_sp + (c_out,))

    def backward(g):
        g2 = g.reshape(n_out, c_out)
        gw = gx = None
        if weight.requires_grad:
            if sparse is not None:
                gw = np.zeros_like(weight.data)
                for off, (rows, out_idx) in zip(offsets, sparse):
                    gw[off] = feats[rows].T @ g2[out_idx]
            elif cols is not None:
                gw = (cols.T @ g2).reshape(weight.shape)
            else:
                gw = np.zeros_like(weight.data)
                for off in offsets:
                    gw[off] = window(xp, off).reshape(-1, c_in).T @ g2
        if x.requires_grad:
            gx = np.zeros(xp.shape)
            dcols = (g2 @ w_mat.T).reshape(out_sp + (n_k, c_in))
            for k, off in enumerate(offsets):
                window(gx, off)[...] += dcols[..., k, :]
            if padding:
                gx = gx[tuple(slice(padding, padding + n) for n in x.shape[:-1])]
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"conv2d expects (X, Y, C) input, got {x.shape}")
    return conv(x, weight, bias, stride, padding)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"conv3d expects (X, Y, Z, C) input, got {x.shape}")
    return conv(x, weight, bias, stride, padding)
