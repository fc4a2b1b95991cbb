"""A small reverse-mode autodiff tape over numpy arrays, with the layer primitives we need.

Tensors are NCHW. Every primitive records a closure that maps the output
gradient to input gradients; ``Tensor.backward`` replays them in reverse
topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if p.requires_grad)
        grads = {id(self): np.ones_like(self.data) if grad is None else grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # sugar for the few arithmetic ops the networks need
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, k: float) -> "Tensor":
        return scale(self, k)

    __rmul__ = __mul__


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise and reductions

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, k: float) -> Tensor:
    return _result(a.data * k, (a,), lambda g: (g * k,))


def weighted_sum(terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """Scalar combination sum_i w_i * t_i of same-shape tensors."""
    shape = terms[0][1].shape
    if any(t.shape != shape for _, t in terms):
        raise ShapeMismatch("weighted_sum: shapes differ")
    data = sum(w * t.data for w, t in terms)
    return _result(np.asarray(data), [t for _, t in terms], lambda g: [w * g for w, _ in terms])


def dot_const(t: Tensor, w: np.ndarray) -> Tensor:
    """Scalar sum_i w_i * t_i against a constant weight vector."""
    if t.shape != w.shape:
        raise ShapeMismatch(f"dot_const: {t.shape} vs {w.shape}")
    return _result(np.asarray(t.data @ w), (t,), lambda g: (g * w,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1 - y * y),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def l1_loss(x: Tensor, target: np.ndarray) -> Tensor:
    if x.shape != target.shape:
        raise ShapeMismatch(f"l1_loss: {x.shape} vs {target.shape}")
    diff = x.data - target
    n = diff.size
    return _result(np.asarray(np.abs(diff).mean()), (x,), lambda g: (g * np.sign(diff) / n,))


def mse_to(x: Tensor, value: float) -> Tensor:
    """Mean squared distance to a constant regression label."""
    diff = x.data - value
    n = diff.size
    return _result(np.asarray((diff * diff).mean()), (x,), lambda g: (g * 2 * diff / n,))


# ---------------------------------------------------------------------------
# convolution

def _pad_reflect(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect") if p else x


def _unpad_reflect(g: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of reflect padding: fold border gradients back onto their source pixels."""
    if not p:
        return g
    g = g.copy()
    for axis in (2, 3):
        n = g.shape[axis] - 2 * p
        core = [slice(None)] * 4
        for i in range(p):
            src = [slice(None)] * 4
            src[axis] = i
            core[axis] = 2 * p - i
            g[tuple(core)] += g[tuple(src)]
            src[axis] = n + p + i
            core[axis] = n + p - 2 - i
            g[tuple(core)] += g[tuple(src)]
        keep = [slice(None)] * 4
        keep[axis] = slice(p, n + p)
        g = g[tuple(keep)]
    return g


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Square-kernel convolution with reflect padding of ``k // 2`` ('same' for stride 1)."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2 or (b is not None and b.shape != (o,)):
        raise ShapeMismatch(f"conv2d: input {x.shape}, weight {w.shape}")
    p = k // 2
    if p and (h <= p or wd <= p):
        raise ShapeMismatch(f"conv2d: input {x.shape} too small for reflect padding")
    xp = _pad_reflect(x.data, p)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # columns ordered (ky, kx, c) so the input-gradient scatter runs over contiguous channels
    cols = win.transpose(0, 2, 3, 4, 5, 1).reshape(n * ho * wo, k * k * c)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, k, k, c)
            gxp = np.zeros((n, xp.shape[2], xp.shape[3], c), dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
            gx = _unpad_reflect(gxp.transpose(0, 3, 1, 2), p)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(np.ascontiguousarray(out), parents, backward)


# ---------------------------------------------------------------------------
# normalization, resampling, concatenation

def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _result(y, (x,), backward)


def nn_upsample(x: Tensor, factor: int = 2) -> Tensor:
    y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _result(y, (x,), backward)


def avg_pool(x: Tensor, k: int) -> Tensor:
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeMismatch(f"avg_pool: {x.shape} not divisible by {k}")
    y = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _result(y, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = xs[0].shape
    for t in xs:
        if t.data.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeMismatch("concat: incompatible shapes")
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return _result(np.concatenate([t.data for t in xs], axis=axis), xs,
                   lambda g: np.split(g, sizes, axis=axis))


# ---------------------------------------------------------------------------
# softmax family (over the channel axis)

def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _result(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_np(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)
