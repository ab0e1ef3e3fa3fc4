"""Dense float64 tensors with a dynamic reverse-mode differentiation tape.

Every value is a row-major numpy array of 64-bit floats. An op whose inputs
require gradients records its parents and a backward closure on the result;
`backward(loss, params)` walks that graph once and then releases it (the tape
is rebuilt on the next forward pass). Arrays stay small at desk scale, so
clarity and gradient-check headroom win over speed everywhere.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "stack",
    "bilinear_sample",
    "primitive_forward",
    "backward",
    "set_debug",
    "debug_checks",
]

# When enabled, every op result is checked for NaN/Inf (slow; used by tests
# and the numerical-abort diagnostics).
_DEBUG = False


def set_debug(enabled: bool) -> None:
    global _DEBUG
    _DEBUG = bool(enabled)


class debug_checks:
    """Context manager enabling per-op finiteness checks."""

    def __enter__(self):
        self._saved = _DEBUG
        set_debug(True)
        return self

    def __exit__(self, *exc):
        set_debug(self._saved)
        return False


def _require_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{where}: non-finite values encountered")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _require_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self) -> np.ndarray:
        """Plain numpy view of the value, off the tape."""
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    # method aliases so composites read naturally
    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def max(self, axis, keepdims=False):
        return treduce_extremum(self, axis, keepdims, np.max)

    def min(self, axis, keepdims=False):
        return treduce_extremum(self, axis, keepdims, np.min)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Internal op-result constructor; skips finiteness checks unless debugging."""
    if _DEBUG:
        _require_finite(data, "op result")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# binary elementwise ops (numpy broadcasting rules)
# ----------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(data, (a, b), bw)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = np.maximum(a.data, b.data)

    def bw(g):
        take_a = a.data >= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _result(data, (a, b), bw)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = np.minimum(a.data, b.data)

    def bw(g):
        take_a = a.data <= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _result(data, (a, b), bw)


def atan2(y, x) -> Tensor:
    """Elementwise arctangent of y/x with quadrant handling.

    The gradient denominator is floored to keep near-origin inputs from
    producing infinities; callers keep inputs away from (0, 0).
    """
    y, x = as_tensor(y), as_tensor(x)
    data = np.arctan2(y.data, x.data)

    def bw(g):
        denom = np.maximum(x.data * x.data + y.data * y.data, 1e-12)
        if y.requires_grad:
            y._accumulate(_unbroadcast(g * x.data / denom, y.shape))
        if x.requires_grad:
            x._accumulate(_unbroadcast(-g * y.data / denom, x.shape))

    return _result(data, (y, x), bw)


# ----------------------------------------------------------------------
# unary elementwise ops
# ----------------------------------------------------------------------


def _unary(a, fwd, dfn) -> Tensor:
    a = as_tensor(a)
    data = fwd(a.data)

    def bw(g):
        a._accumulate(g * dfn(a.data, data))

    return _result(data, (a,), bw)


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y)


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def sin(a) -> Tensor:
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def cos(a) -> Tensor:
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def tabs(a) -> Tensor:
    return _unary(a, np.abs, lambda x, y: np.sign(x))


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # stable in both tails
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bw(g):
        a._accumulate(g * data * (1.0 - data))

    return _result(data, (a,), bw)


def power(a, p: float) -> Tensor:
    """a ** p for a constant exponent; defined for non-negative bases."""
    a = as_tensor(a)
    p = float(p)
    data = np.power(a.data, p)

    def bw(g):
        base = np.maximum(a.data, 1e-300)
        a._accumulate(g * p * np.power(base, p - 1.0))

    return _result(data, (a,), bw)


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values; gradient passes only through the unclipped interior."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def bw(g):
        mask = np.ones_like(a.data)
        if lo is not None:
            mask *= a.data >= lo
        if hi is not None:
            mask *= a.data <= hi
        a._accumulate(g * mask)

    return _result(data, (a,), bw)


def softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        a._accumulate(data * (g - inner))

    return _result(data, (a,), bw)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean / unit variance."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def bw(g):
        n = a.data.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xc).mean(axis=-1, keepdims=True)
        a._accumulate(inv * (g - gm) - xc * (inv ** 3) * gx)

    return _result(data, (a,), bw)


# ----------------------------------------------------------------------
# matmul / shape ops
# ----------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _result(data, (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _result(data, (a,), bw)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(np.transpose(g, inv))

    return _result(data, (a,), bw)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: {a.shape} does not broadcast to {shape}")
    data = np.ascontiguousarray(data)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _result(data, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _result(data, tuple(tensors), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        for t, gp in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(gp)

    return _result(data, tuple(tensors), bw)


def tslice(a, key) -> Tensor:
    a = as_tensor(a)
    data = a.data[key]
    if isinstance(data, np.ndarray) and data.base is not None:
        data = data.copy()

    def bw(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, key, g)
        a._accumulate(buf)

    return _result(np.asarray(data), (a,), bw)


def take_flat(a, indices: np.ndarray) -> Tensor:
    """Gather entries of the flattened tensor at integer `indices`."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    data = a.data.reshape(-1)[indices].copy()

    def bw(g):
        buf = np.zeros(a.data.size)
        np.add.at(buf, indices, g.reshape(-1))
        a._accumulate(buf.reshape(a.shape))

    return _result(data, (a,), bw)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(np.asarray(data), (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in axis]))
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g / count, a.shape).copy())

    return _result(np.asarray(data), (a,), bw)


def treduce_extremum(a, axis: int, keepdims: bool, op) -> Tensor:
    """Min/max along one axis; ties share the gradient equally."""
    a = as_tensor(a)
    axis = axis % a.ndim
    data = op(a.data, axis=axis, keepdims=True)
    mask = (a.data == data).astype(np.float64)
    mask /= mask.sum(axis=axis, keepdims=True)
    out = data if keepdims else np.squeeze(data, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(mask * g)

    return _result(np.asarray(out), (a,), bw)


# ----------------------------------------------------------------------
# bilinear grid sampling
# ----------------------------------------------------------------------


def bilinear_sample(grid, coords) -> Tensor:
    """Sample a H x W x C grid at P continuous (row, col) locations.

    Cells outside [0, H-1] x [0, W-1] read as zeros, so samples fade to
    nothing within one cell of the border and far-out coordinates return
    exact zero vectors. Differentiable in both the grid and the coordinates.
    """
    grid, coords = as_tensor(grid), as_tensor(coords)
    if grid.ndim != 3:
        raise ShapeError(f"bilinear_sample: grid must be H x W x C, got {grid.shape}")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"bilinear_sample: coords must be P x 2, got {coords.shape}")
    H, W, C = grid.shape
    if H < 2 or W < 2:
        raise ShapeError(f"bilinear_sample: grid must be at least 2 x 2, got {grid.shape}")
    _require_finite(coords.data, "bilinear_sample coords")

    r = coords.data[:, 0]
    c = coords.data[:, 1]
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    wr = r - r0
    wc = c - c0

    corners = []  # (value P x C, weight P, row-index P, col-index P, in-bounds P)
    for dr, dc, w in ((0, 0, (1 - wr) * (1 - wc)), (0, 1, (1 - wr) * wc),
                      (1, 0, wr * (1 - wc)), (1, 1, wr * wc)):
        ri, ci = r0 + dr, c0 + dc
        ok = (ri >= 0) & (ri < H) & (ci >= 0) & (ci < W)
        rs, cs = np.where(ok, ri, 0), np.where(ok, ci, 0)
        val = grid.data[rs, cs, :] * ok[:, None]
        corners.append((val, w, rs, cs, ok))

    data = sum(val * w[:, None] for val, w, _, _, _ in corners)

    def bw(g):
        if grid.requires_grad:
            gg = np.zeros_like(grid.data)
            for val, w, rs, cs, ok in corners:
                contrib = g * (w * ok)[:, None]
                np.add.at(gg, (rs, cs), contrib)
            grid._accumulate(gg)
        if coords.requires_grad:
            v00, v01, v10, v11 = (corners[i][0] for i in range(4))
            dvdr = (v10 - v00) * (1 - wc)[:, None] + (v11 - v01) * wc[:, None]
            dvdc = (v01 - v00) * (1 - wr)[:, None] + (v11 - v10) * wr[:, None]
            gc = np.empty_like(coords.data)
            gc[:, 0] = (g * dvdr).sum(axis=1)
            gc[:, 1] = (g * dvdc).sum(axis=1)
            coords._accumulate(gc)

    return _result(data, (grid, coords), bw)


# ----------------------------------------------------------------------
# the primitive dispatcher and backward pass
# ----------------------------------------------------------------------

_PRIMITIVES = {
    "matmul": lambda ins, attrs: matmul(ins[0], ins[1]),
    "add": lambda ins, attrs: add(ins[0], ins[1]),
    "mul": lambda ins, attrs: mul(ins[0], ins[1]),
    "concat": lambda ins, attrs: concat(ins, axis=attrs.get("axis", 0)),
    "slice": lambda ins, attrs: tslice(ins[0], attrs["key"]),
    "reshape": lambda ins, attrs: reshape(ins[0], attrs["shape"]),
    "transpose": lambda ins, attrs: transpose(ins[0], attrs["axes"]),
    "softmax_lastdim": lambda ins, attrs: softmax_lastdim(ins[0]),
    "relu": lambda ins, attrs: relu(ins[0]),
    "sigmoid": lambda ins, attrs: sigmoid(ins[0]),
    "layer_norm": lambda ins, attrs: layer_norm(ins[0], attrs.get("eps", 1e-5)),
    "exp": lambda ins, attrs: exp(ins[0]),
    "log": lambda ins, attrs: log(ins[0]),
    "sqrt": lambda ins, attrs: sqrt(ins[0]),
    "sum": lambda ins, attrs: tsum(ins[0], attrs.get("axis"), attrs.get("keepdims", False)),
    "mean": lambda ins, attrs: tmean(ins[0], attrs.get("axis"), attrs.get("keepdims", False)),
    "broadcast": lambda ins, attrs: broadcast_to(ins[0], attrs["shape"]),
}


def primitive_forward(op_name: str, inputs, attrs: dict | None = None) -> Tensor:
    """Named-op entry point over the primitive set; validates inputs."""
    if op_name not in _PRIMITIVES:
        raise ShapeError(f"primitive_forward: unknown op '{op_name}'")
    inputs = [as_tensor(t) for t in inputs]
    for i, t in enumerate(inputs):
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"primitive_forward: op '{op_name}' input {i} is non-finite")
    return _PRIMITIVES[op_name](inputs, attrs or {})


def _toposort(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params) -> dict:
    """Reverse-mode sweep from a scalar loss; returns {name: gradient array}.

    Parameters unreachable from the loss get zero gradients. The walked
    portion of the tape is released afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise NumericalError("backward: loss is not connected to the differentiation tape")

    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)

    grads = {}
    for name, p in params.items():
        grads[name] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)

    for node in order:
        node._parents = ()
        node._backward_fn = None
        node.grad = None
    return grads


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
