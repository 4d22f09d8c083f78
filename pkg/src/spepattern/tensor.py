"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

The graph is built define-by-run: every op returns a new :class:`Tensor` that
remembers its parents and a closure mapping the upstream gradient to one
gradient per parent. :meth:`Tensor.backward` walks the graph in reverse
topological order, visiting each node once.

Only the vocabulary needed by the generator, discriminator, augmentation and
symmetry losses is provided. Broadcasting is limited to python scalars and
per-channel bias addition.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "Tape",
    "make_op",
    "no_grad",
    "precision",
    "get_default_dtype",
    "matmul",
    "add_bias",
    "reshape",
    "transpose",
    "conv2d",
    "conv2d_3x3",
    "upsample2x_nearest",
    "avg_pool2x",
    "leaky_relu",
    "relu",
    "tanh",
    "softmax",
    "activation",
    "sum",
    "mean",
    "mean_sq_diff",
    "mean_abs_diff",
    "reduce",
]

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_default_dtype() -> np.dtype:
    return _get("dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    old = get_default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _get("grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


class Tape:
    """Ordered record of ops executed while the context is active.

    Used for instrumentation; backward does not depend on it.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        tapes = _get("tapes", None)
        if tapes is None:
            tapes = _state.tapes = []
        tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.remove(self)
        return False

    @property
    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]


class Tensor:
    """Dense array with optional participation in the gradient graph."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = get_default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __len__(self):
        return self.shape[0]

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every reachable node."""
        if self.data.size != 1 and grad is None:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if grad is None:
            grad = np.ones_like(self.data)
        order = self._topo()
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def _topo(self) -> list[Tensor]:
        order, seen = [], set()
        stack = [(self, False)]
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

    def ancestors(self) -> list[Tensor]:
        """All graph nodes feeding into this tensor, itself included."""
        return self._topo()

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -other if not isinstance(other, Tensor) else _neg(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor division is not supported")
        return _mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return sum(self)

    def mean(self):
        return mean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward(g)`` must return one gradient (or ``None``) per parent.
    """
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _get("grad_enabled", True) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    for tape in _get("tapes", ()) or ():
        tape.nodes.append(out)
    return out


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same(a, b, "add")
        return make_op(a.data + b.data, (a, b), lambda g: (g, g), "add")
    return make_op(a.data + np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,), "add_const")


def _neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def _mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same(a, b, "mul")
        return make_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")
    c = np.asarray(b, dtype=a.dtype)
    if c.ndim:
        raise DimensionError("only scalar constants broadcast in mul")
    return make_op(a.data * c, (a,), lambda g: (g * c,), "mul_const")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may carry a leading batch axis, ``b`` too."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul: batch extents differ in {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if a.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if b.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return make_op(out, (a, b), backward, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias along axis 1 of ``x``."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match channels of {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    return make_op(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return make_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1 and stride 1 or 2."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects [B,C,H,W] input and [O,C,3,3] kernel, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O = w.shape[0]
    if w.shape[1] != C:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {w.shape[1]}")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({O},)")
    if stride not in (1, 2):
        raise DimensionError(f"conv2d: unsupported stride {stride}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    Ho, Wo = (H - 1) // stride + 1, (W - 1) // stride + 1
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    cols = np.empty((B, C, 3, 3, Ho, Wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + hs:stride, j:j + ws:stride]
    cols = cols.reshape(B, C * 9, Ho * Wo)
    wmat = w.data.reshape(O, C * 9)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, O, 1)
    out = out.reshape(B, O, Ho, Wo)

    def backward(g):
        gm = g.reshape(B, O, Ho * Wo)
        gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gm).reshape(B, C, 3, 3, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    gxp[:, :, i:i + hs:stride, j:j + ws:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, 1:-1, 1:-1]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return make_op(out, parents, backward, "conv2d")


def conv2d_3x3(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    return conv2d(x, w, bias, stride=1)


def upsample2x_nearest(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"upsample2x_nearest expects [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_op(out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),), "upsample2x")


def avg_pool2x(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"avg_pool2x needs even spatial extents, got {x.shape}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_op(out, (x,), backward, "avg_pool2x")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return make_op(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return make_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for rank {x.ndim}")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op(s, (x,), backward, "softmax")


def activation(x: Tensor, kind: str, axis: int = -1) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "softmax":
        return softmax(x, axis)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {kind!r}")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return make_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_op(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),), "mean"
    )


def mean_sq_diff(x: Tensor, y) -> Tensor:
    """Mean over all elements of ``(x - y)**2``."""
    y = _as_tensor(y)
    _check_same(x, y, "mean_sq_diff")
    d = x.data - y.data
    n = d.size

    def backward(g):
        gx = (2.0 / n) * g * d
        return gx, -gx

    return make_op(np.asarray(np.mean(d * d), dtype=x.dtype), (x, y), backward, "mean_sq_diff")


def mean_abs_diff(x: Tensor, y) -> Tensor:
    y = _as_tensor(y)
    _check_same(x, y, "mean_abs_diff")
    d = x.data - y.data
    n = d.size

    def backward(g):
        gx = (g / n) * np.sign(d)
        return gx, -gx

    return make_op(np.asarray(np.mean(np.abs(d)), dtype=x.dtype), (x, y), backward, "mean_abs_diff")


def reduce(x: Tensor, kind: str, y=None) -> Tensor:
    if kind == "sum":
        return sum(x)
    if kind == "mean":
        return mean(x)
    if kind == "mean_sq_diff":
        return mean_sq_diff(x, y)
    if kind == "mean_abs_diff":
        return mean_abs_diff(x, y)
    raise ValueError(f"unknown reduction {kind!r}")
