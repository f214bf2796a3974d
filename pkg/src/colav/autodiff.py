"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every trainable computation in this package (encoders, decoder, losses) is
expressed through the `Tensor` class below so that analytic gradients come
from one auditable place and can be checked against central finite
differences. Arrays are float64 throughout; ops cover exactly what the
models need (broadcast arithmetic, matmul, a strided valid-padding conv,
reductions, cumsum, concat/slice) and nothing more.

Gating semantics worth knowing: anything passed in as a plain ndarray or a
Tensor with ``requires_grad=False`` is a constant, so masks built from
``.data`` (argmin selections, frozen collision gates) route gradients
without receiving any.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "concat", "conv2d", "logsumexp"]


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in a dynamically built computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Opt out of numpy's binary-op handling so `ndarray <op> Tensor` defers
    # to the reflected Tensor operator instead of building an object array.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        a, b = self, Tensor._lift(other)

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

        return Tensor._make(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * Tensor._lift(other).pow(-1.0)

    def __rtruediv__(self, other):
        return Tensor._lift(other) * self.pow(-1.0)

    def pow(self, exponent: float) -> "Tensor":
        a, n = self, float(exponent)

        def backward(g):
            return (g * n * a.data ** (n - 1.0),)

        return Tensor._make(a.data**n, (a,), backward)

    def __matmul__(self, other):
        a, b = self, Tensor._lift(other)
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands; reshape around it")

        def backward(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._make(a.data @ b.data, (a, b), backward)

    # ---- nonlinearities and elementwise maps ------------------------------

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0.0
        return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sigmoid(self) -> "Tensor":
        a = self
        out = 1.0 / (1.0 + np.exp(-a.data))
        return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))

    # ---- reductions and shape ops -----------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            gx = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gx, a.shape).copy(),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        if axis is None:
            count = a.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([a.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def cumsum(self, axis: int) -> "Tensor":
        a = self

        def backward(g):
            return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

        return Tensor._make(np.cumsum(a.data, axis=axis), (a,), backward)

    def reshape(self, *shape) -> "Tensor":
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(
            a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
        )

    def __getitem__(self, idx) -> "Tensor":
        a = self

        def backward(g):
            ga = np.zeros(a.shape)
            ga[idx] += g
            return (ga,)

        return Tensor._make(a.data[idx], (a,), backward)

    def broadcast_to(self, shape: tuple) -> "Tensor":
        a = self
        return Tensor._make(
            np.broadcast_to(a.data, shape).copy(),
            (a,),
            lambda g: (_unbroadcast(g, a.shape),),
        )

    # ---- backprop driver ---------------------------------------------------

    def backward(self, seed=None) -> None:
        """Accumulate gradients of this node into every reachable leaf."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed needs a scalar output")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): _as_array(seed)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, gp in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + gp
                else:
                    grads[key] = gp


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along `axis`; gradient splits back to each input."""
    ts = [Tensor._lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in ts], axis=axis), ts, backward
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid-padding 2-D convolution, x (B,C,H,W) * w (F,C,kh,kw) + b (F,)."""
    x, w, b = Tensor._lift(x), Tensor._lift(w), Tensor._lift(b)
    bsz, cin, h, wid = x.shape
    f, cw, kh, kw = w.shape
    if cw != cin:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cw}")
    s = int(stride)
    ho = (h - kh) // s + 1
    wo = (wid - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{wid}")
    xd, wd = x.data, w.data
    out = np.tile(b.data[None, :, None, None], (bsz, 1, ho, wo))
    for i in range(kh):
        for j in range(kw):
            xs = xd[:, :, i : i + s * ho : s, j : j + s * wo : s]
            out += np.einsum("bchw,fc->bfhw", xs, wd[:, :, i, j], optimize=True)

    def backward(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        gb = g.sum(axis=(0, 2, 3))
        for i in range(kh):
            for j in range(kw):
                xs = xd[:, :, i : i + s * ho : s, j : j + s * wo : s]
                gw[:, :, i, j] = np.einsum("bfhw,bchw->fc", g, xs, optimize=True)
                gx[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.einsum(
                    "bfhw,fc->bchw", g, wd[:, :, i, j], optimize=True
                )
        return gx, gw, gb

    return Tensor._make(out, (x, w, b), backward)


def logsumexp(t: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log-sum-exp along `axis` (shift is an exact constant)."""
    t = Tensor._lift(t)
    m = t.data.max(axis=axis, keepdims=True)
    shifted = t - m
    lse = shifted.exp().sum(axis=axis).log()
    return lse + np.squeeze(m, axis=axis)
