"""
autograd.py

Minimal reverse-mode differentiation tape over float64 numpy arrays.

Each Tensor records its parents and a closure that pushes out.grad back into
them. backward() topologically sorts the graph reachable from a scalar and
runs the closures in reverse. Only tensors with requires_grad=True ever
accumulate gradient; a graph built purely from requires_grad=False leaves
records nothing, which is how the key branch stays outside the tape.

Supported ops: + − * (with numpy broadcasting), @, sum, mean_rows, reshape,
transpose, relu, conv2d (H×W×C layout, im2col), normalize_rows.
"""

from typing import Callable, Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op")

    # ndarray (op) Tensor defers to the Tensor's reflected operator.
    __array_ufunc__ = None

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _children: Iterable["Tensor"] = (),
        _op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self._prev = tuple(_children)
        self._backward: Callable[[], None] = lambda: None
        self._op = _op

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def _result(self, data, children: tuple, op: str) -> "Tensor":
        needs = any(child.requires_grad for child in children)
        return Tensor(data, requires_grad=needs, _children=children if needs else (), _op=op)

    # ── Elementwise ────────────────────────────────────────────────────────────

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        out = self._result(self.data + other.data, (self, other), "+")

        def _backward():
            if self.requires_grad:
                self.grad += _unbroadcast(out.grad, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        out = self._result(self.data * other.data, (self, other), "*")

        def _backward():
            if self.requires_grad:
                self.grad += _unbroadcast(other.data * out.grad, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(self.data * out.grad, other.data.shape)

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        out = self._result(np.where(mask, self.data, 0.0), (self,), "relu")

        def _backward():
            if self.requires_grad:
                self.grad += np.where(mask, out.grad, 0.0)

        out._backward = _backward
        return out

    # ── Linear algebra and reductions ──────────────────────────────────────────

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        out = self._result(self.data @ other.data, (self, other), "@")

        def _backward():
            if self.requires_grad:
                self.grad += out.grad @ other.data.T
            if other.requires_grad:
                other.grad += self.data.T @ out.grad

        out._backward = _backward
        return out

    def __rmatmul__(self, other) -> "Tensor":
        return self._lift(other) @ self

    @property
    def T(self) -> "Tensor":
        out = self._result(self.data.T, (self,), "T")

        def _backward():
            if self.requires_grad:
                self.grad += out.grad.T

        out._backward = _backward
        return out

    def sum(self) -> "Tensor":
        out = self._result(np.sum(self.data), (self,), "sum")

        def _backward():
            if self.requires_grad:
                self.grad += np.broadcast_to(out.grad, self.data.shape)

        out._backward = _backward
        return out

    def mean_rows(self) -> "Tensor":
        """(n, C) → (1, C) column means."""
        n = self.data.shape[0]
        out = self._result(self.data.mean(axis=0, keepdims=True), (self,), "mean_rows")

        def _backward():
            if self.requires_grad:
                self.grad += np.broadcast_to(out.grad / n, self.data.shape)

        out._backward = _backward
        return out

    def reshape(self, *shape) -> "Tensor":
        out = self._result(self.data.reshape(*shape), (self,), "reshape")

        def _backward():
            if self.requires_grad:
                self.grad += out.grad.reshape(self.data.shape)

        out._backward = _backward
        return out

    # ── Backward pass ──────────────────────────────────────────────────────────

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor.")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=np.float64).copy()

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))

        for node in reversed(order):
            node._backward()


# ── Structured ops ─────────────────────────────────────────────────────────────

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D convolution on an (H, W, Cin) input with weight (Cout, Cin, k, k).

    Output is (Ho, Wo, Cout), Ho = (H + 2p − k) // s + 1.
    """
    H, W, cin = x.data.shape
    cout, wcin, k, k2 = weight.data.shape
    if wcin != cin or k != k2:
        raise ValueError(f"conv2d weight {weight.data.shape} does not fit input {x.data.shape}.")

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    ho, wo = windows.shape[0], windows.shape[1]
    cols = windows.reshape(ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    out_data = (cols @ wmat.T + bias.data).reshape(ho, wo, cout)
    out = x._result(out_data, (x, weight, bias), "conv2d")

    def _backward():
        d2 = out.grad.reshape(ho * wo, cout)
        if weight.requires_grad:
            weight.grad += (d2.T @ cols).reshape(weight.data.shape)
        if bias.requires_grad:
            bias.grad += d2.sum(axis=0)
        if x.requires_grad:
            dcols = (d2 @ wmat).reshape(ho, wo, cin, k, k)
            gxp = np.zeros_like(xp)
            span_h = stride * (ho - 1) + 1
            span_w = stride * (wo - 1) + 1
            for ki in range(k):
                for kj in range(k):
                    gxp[ki:ki + span_h:stride, kj:kj + span_w:stride, :] += dcols[:, :, :, ki, kj]
            x.grad += gxp[padding:padding + H, padding:padding + W, :]

    out._backward = _backward
    return out


def normalize_rows(x: Tensor) -> Tensor:
    """Each row scaled to unit L2 norm; zero rows map to zero with zero gradient."""
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    live = norms > 0.0
    safe = np.where(live, norms, 1.0)
    y = np.where(live, x.data / safe, 0.0)
    out = x._result(y, (x,), "normalize_rows")

    def _backward():
        if x.requires_grad:
            g = out.grad
            radial = np.sum(y * g, axis=1, keepdims=True)
            x.grad += np.where(live, (g - y * radial) / safe, 0.0)

    out._backward = _backward
    return out
