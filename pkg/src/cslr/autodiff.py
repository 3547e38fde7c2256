"""Reverse-mode automatic differentiation over dense float64 arrays.

Every learned mechanism in the package (attention masks, transformer
layers, CTC, triplet and signer losses) is expressed through these
primitives. The graph is define-by-run: each op records its parents and
a backward closure, and :func:`backward` propagates exact analytic
gradients from a scalar loss. Tensors are never mutated in place once
they participate in a graph.

Gradients accumulate additively, both across multiple uses of a tensor
within one graph and across repeated backward calls (call
:meth:`Tensor.zero_grad` between independent passes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from cslr import kernels


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class Tensor:
    """Dense float64 array with an optional gradient slot and graph node."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

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
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Create a graph node with an explicit backward closure.

    backward receives the upstream gradient and returns one gradient (or
    None) per parent. Used by ops with non-composable derivatives (CTC,
    statistics pooling).
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) to every requires_grad tensor in the graph."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


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


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# elementwise and arithmetic primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    return make_node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return make_node(out_data, (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return make_node(out_data, (a,), lambda g: (g / (2.0 * out_data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return make_node(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape manipulation

def concat(parts: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(p) for p in parts]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in ts]} do not conform") from None
    return make_node(data, ts, bwd)


def take(a, key) -> Tensor:
    """Basic slicing (python slices / ints / tuples thereof)."""
    a = as_tensor(a)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return make_node(a.data[key], (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make_node(table.data[ids], (table,), bwd)


# ---------------------------------------------------------------------------
# matmul and reductions

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return make_node(np.matmul(a.data, b.data), (a, b), bwd)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bwd)


def _axis_count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    if isinstance(axis, int):
        return shape[axis]
    return int(np.prod([shape[i] for i in axis]))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = _axis_count(a.shape, axis)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / n,)

    return make_node(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), bwd)


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the gradient to the first (row-major) maximum."""
    a = as_tensor(a)
    data = np.max(a.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        ga = np.zeros_like(a.data)
        if axis is None:
            idx = np.unravel_index(np.argmax(a.data), a.shape)
            ga[idx] = g.reshape(())
        else:
            moved = np.moveaxis(a.data, axis, -1)
            arg = np.argmax(moved, axis=-1)
            gm = np.moveaxis(ga, axis, -1)
            gg = g if keepdims else np.expand_dims(g, axis)
            gg = np.moveaxis(gg, axis, -1)[..., 0]
            np.put_along_axis(gm, arg[..., None], gg[..., None], axis=-1)
        return (ga,)

    return make_node(data, (a,), bwd)


def reduce_std(a, axis=None, eps: float = 0.0, keepdims: bool = False) -> Tensor:
    """Population standard deviation with additive eps inside the root."""
    a = as_tensor(a)
    n = _axis_count(a.shape, axis)
    mu = np.mean(a.data, axis=axis, keepdims=True)
    var = np.mean((a.data - mu) ** 2, axis=axis, keepdims=True)
    std = np.sqrt(var + eps)
    data = std if keepdims else np.squeeze(std, axis=axis) if axis is not None else std.reshape(())

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(np.asarray(g), std.shape)
        return (g * (a.data - mu) / (n * std),)

    return make_node(data, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return make_node(y, (a,), bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse

    def bwd(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return make_node(y, (a,), bwd)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (no affine; compose with mul/add for one)."""
    a = as_tensor(a)
    mu = np.mean(a.data, axis=-1, keepdims=True)
    var = np.mean((a.data - mu) ** 2, axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    y = (a.data - mu) / s

    def bwd(g):
        gm = np.mean(g, axis=-1, keepdims=True)
        gy = np.mean(g * y, axis=-1, keepdims=True)
        return ((g - gm - y * gy) / s,)

    return make_node(y, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution kernels (dispatched to the selected backend)

def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate x (N,Cin,H,W) with w (Cout,Cin,kh,kw) plus optional bias."""
    x, w = as_tensor(x), as_tensor(w)
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: shapes {x.shape} and {w.shape} do not conform")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"conv2d: kernel {(kh, kw)} with pad {padding} exceeds input {(h, wd)}"
        )
    xc = np.ascontiguousarray(x.data)
    wc = np.ascontiguousarray(w.data)
    y = kernels.conv2d_forward(xc, wc, stride, padding)
    if b is None:
        def bwd(g):
            gx, gw = kernels.conv2d_backward(np.ascontiguousarray(g), xc, wc, stride, padding)
            return gx, gw

        return make_node(y, (x, w), bwd)

    b = as_tensor(b)
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {cout} channels")

    def bwd_b(g):
        g = np.ascontiguousarray(g)
        gx, gw = kernels.conv2d_backward(g, xc, wc, stride, padding)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_node(y + b.data[None, :, None, None], (x, w, b), bwd_b)


def depthwise_conv1d(x, w) -> Tensor:
    """Per-channel temporal conv of x (T,d) with taps w (d,k); same-length output."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"depthwise_conv1d: shapes {x.shape} and {w.shape} do not conform")
    if w.shape[1] % 2 == 0:
        raise ValueError(f"depthwise_conv1d: kernel size {w.shape[1]} must be odd")
    xc = np.ascontiguousarray(x.data)
    wc = np.ascontiguousarray(w.data)

    def bwd(g):
        return kernels.dwconv1d_backward(np.ascontiguousarray(g), xc, wc)

    return make_node(kernels.dwconv1d_forward(xc, wc), (x, w), bwd)


def gradient_reversal(x, lam: float = 1.0) -> Tensor:
    """Identity forward; upstream gradient scaled by -lam in the backward pass."""
    x = as_tensor(x)
    if lam < 0:
        raise ValueError("gradient_reversal: lam must be nonnegative")
    lam = float(lam)
    return make_node(x.data, (x,), lambda g: (-lam * g,))


# ---------------------------------------------------------------------------
# verification oracle

def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor; x must be a leaf with
    requires_grad set. Error per coordinate is
    |analytic - numeric| / max(1, |analytic|).
    """
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x).item()
        flat[i] = orig - h
        lo = f(x).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# parameter grouping

ROLE_BACKBONE = "backbone"
ROLE_SRM = "srm"


@dataclass
class ParamGroup:
    """Named set of learnable tensors sharing a role and LR scale."""

    name: str
    params: list[Tensor] = field(default_factory=list)
    role: str = ROLE_BACKBONE
    lr_scale: float = 1.0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# generic dispatch surface

_PRIMITIVES: dict[str, Callable] = {
    "add": lambda inputs, attrs: add(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "div": lambda inputs, attrs: div(*inputs),
    "neg": lambda inputs, attrs: neg(*inputs),
    "scalar_mul": lambda inputs, attrs: scalar_mul(inputs[0], attrs["value"]),
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "exp": lambda inputs, attrs: exp(*inputs),
    "log": lambda inputs, attrs: log(*inputs),
    "sqrt": lambda inputs, attrs: sqrt(*inputs),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "relu": lambda inputs, attrs: relu(*inputs),
    "concat": lambda inputs, attrs: concat(inputs, axis=attrs.get("axis", 0)),
    "slice": lambda inputs, attrs: take(inputs[0], attrs["key"]),
    "reshape": lambda inputs, attrs: reshape(inputs[0], attrs["shape"]),
    "transpose": lambda inputs, attrs: transpose(inputs[0], attrs.get("axes")),
    "reduce_sum": lambda inputs, attrs: reduce_sum(inputs[0], **attrs),
    "reduce_mean": lambda inputs, attrs: reduce_mean(inputs[0], **attrs),
    "reduce_max": lambda inputs, attrs: reduce_max(inputs[0], **attrs),
    "reduce_std": lambda inputs, attrs: reduce_std(inputs[0], **attrs),
    "softmax": lambda inputs, attrs: softmax(inputs[0], **attrs),
    "log_softmax": lambda inputs, attrs: log_softmax(inputs[0], **attrs),
    "layer_norm": lambda inputs, attrs: layer_norm(inputs[0], **attrs),
    "embedding_lookup": lambda inputs, attrs: embedding_lookup(inputs[0], attrs["ids"]),
    "conv2d": lambda inputs, attrs: conv2d(*inputs, **attrs),
    "depthwise_conv1d": lambda inputs, attrs: depthwise_conv1d(*inputs),
    "gradient_reversal": lambda inputs, attrs: gradient_reversal(inputs[0], **attrs),
}


def primitive_forward(op_kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Name-based dispatch into the primitive set (records a graph node)."""
    if op_kind not in _PRIMITIVES:
        raise ValueError(f"unknown op_kind {op_kind!r}")
    return _PRIMITIVES[op_kind](list(inputs), attrs or {})
