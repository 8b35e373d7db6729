"""Reverse-mode automatic differentiation over numpy arrays.

Define-by-run tape: each op records a backward closure on its output.
Everything is float64. A module-level switch disables graph building for
rollout-time forward passes.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import ShapeMismatch

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, _prev: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = _prev if _grad_enabled else ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph bookkeeping ------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, upstream: np.ndarray | None = None) -> None:
        if upstream is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without upstream needs a scalar")
            upstream = np.ones_like(self.data)
        else:
            upstream = np.asarray(upstream, dtype=np.float64)
            if upstream.shape != self.data.shape:
                raise ShapeMismatch(
                    f"upstream {upstream.shape} vs output {self.data.shape}"
                )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(upstream)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g to `shape` by summing broadcast axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    req = any(p.requires_grad or p._prev for p in parents)
    out = Tensor(data, _prev=parents if (_grad_enabled and req) else ())
    if _grad_enabled and req:
        out._backward = backward
    return out


# -- primitives -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    data = a.data * k

    def backward(g):
        a._accumulate(g * k)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
        a._accumulate(_unbroadcast(ga, a.data.shape))
        b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = a.data * mask

    def backward(g):
        a._accumulate(g * mask)

    return _make(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        a._accumulate(data * (g - dot))

    return _make(data, (a,), backward)


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax along the last axis restricted to positions where mask is True.

    Rows with no valid position come out all-zero (empty-memory convention).
    """
    neg = np.where(mask, a.data, -np.inf)
    mx = np.max(neg, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(neg - mx), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    safe = np.where(denom > 0, denom, 1.0)
    data = e / safe

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        a._accumulate(data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    sm = np.exp(data)

    def backward(g):
        a._accumulate(g - sm * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm_core(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis: zero mean, unit variance.

    Zero-variance rows normalize to zeros (eps inside the square root).
    """
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def backward(g):
        n = a.data.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * data).mean(axis=-1, keepdims=True)
        a._accumulate(inv * (g - gm - data * gxm))
        del n

    return _make(data, (a,), backward)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding gather: out[...] = table[indices[...]]."""
    idx = np.asarray(indices, dtype=np.intp)
    data = table.data[idx]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _make(data, (table,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    keep = rng.random(a.data.shape) >= p
    factor = keep / (1.0 - p)
    data = a.data * factor

    def backward(g):
        a._accumulate(g * factor)

    return _make(data, (a,), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """1-D convolution. x: (B, Cin, W); weight: (Cout, Cin, K); bias: (Cout,)."""
    B, cin, W = x.data.shape
    cout, cin_w, K = weight.data.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv1d channels {cin} vs {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    Wp = xp.shape[-1]
    Wo = (Wp - K) // stride + 1
    if Wo <= 0:
        raise ShapeMismatch(f"conv1d output width {Wo} for input {W}")
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(B, cin, Wo, K), strides=(s0, s1, s2 * stride, s2)
    )
    # im2col: (B*Wo, Cin*K) @ (Cin*K, Cout)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(B * Wo, cin * K)
    wmat = weight.data.reshape(cout, cin * K).T
    out = cols @ wmat  # (B*Wo, Cout)
    data = out.reshape(B, Wo, cout).transpose(0, 2, 1) + bias.data[None, :, None]

    def backward(g):
        gmat = g.transpose(0, 2, 1).reshape(B * Wo, cout)  # (B*Wo, Cout)
        gw = (gmat.T @ cols).reshape(cout, cin, K)
        gb = g.sum(axis=(0, 2))
        gcols = (gmat @ wmat.T).reshape(B, Wo, cin, K).transpose(0, 2, 1, 3)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, :, k : k + Wo * stride : stride] += gcols[:, :, :, k]
        gx = gxp[:, :, padding : padding + W] if padding else gxp
        x._accumulate(gx)
        weight._accumulate(gw)
        bias._accumulate(gb)

    return _make(data, (x, weight, bias), backward)
