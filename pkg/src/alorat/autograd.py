"""Minimal reverse-mode autodiff over float64 numpy arrays.

Just the handful of operations the encoder needs: broadcasting
arithmetic, (batched) matmul, row softmax, GELU, concatenation, squared
error, and a custom node for the Geman low-rank penalty whose backward pass
is the closed-form singular-vector expression.  Gradients are accumulated
by replaying the tape in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from . import linalg

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Array node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        req = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.data.shape))

        return Tensor(out_data, req, (self, other), backward)

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data
        req = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(-_unbroadcast(grad, other.data.shape))

        return Tensor(out_data, req, (self, other), backward)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        req = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * self.data, other.data.shape))

        return Tensor(out_data, req, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = self.data @ other.data
        req = self.requires_grad or other.requires_grad

        def backward(grad):
            if self.requires_grad:
                ga = grad @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ grad
                other._accumulate(_unbroadcast(gb, other.data.shape))

        return Tensor(out_data, req, (self, other), backward)

    def transpose_last(self):
        out_data = np.swapaxes(self.data, -1, -2)

        def backward(grad):
            self._accumulate(np.swapaxes(grad, -1, -2))

        return Tensor(out_data, self.requires_grad, (self,), backward)

    # -- tape ---------------------------------------------------------------

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- functional ops ----------------------------------------------------------


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; `mask` is a constant additive 0/-inf
    array broadcast against `x`."""
    a = x.data if mask is None else x.data + mask
    s = linalg.softmax_last(a)

    def backward(grad):
        inner = np.sum(grad * s, axis=-1, keepdims=True)
        x._accumulate(s * (grad - inner))

    return Tensor(s, x.requires_grad, (x,), backward)


def expand_dims(x: Tensor, axis: int) -> Tensor:
    out_data = np.expand_dims(x.data, axis)

    def backward(grad):
        x._accumulate(np.squeeze(grad, axis=axis))

    return Tensor(out_data, x.requires_grad, (x,), backward)


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    out_data = np.moveaxis(x.data, src, dst)

    def backward(grad):
        x._accumulate(np.moveaxis(grad, dst, src))

    return Tensor(out_data, x.requires_grad, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    in_shape = x.data.shape
    out_data = x.data.reshape(shape)

    def backward(grad):
        x._accumulate(grad.reshape(in_shape))

    return Tensor(out_data, x.requires_grad, (x,), backward)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    out_data = np.mean(x.data, axis=axis)
    n = x.data.shape[axis]

    def backward(grad):
        x._accumulate(np.repeat(np.expand_dims(grad / n, axis), n, axis=axis))

    return Tensor(out_data, x.requires_grad, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU."""
    u = _SQRT_2_OVER_PI * (x.data + 0.044715 * x.data**3)
    th = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + th)

    def backward(grad):
        du = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x.data**2)
        local = 0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th**2) * du
        x._accumulate(grad * local)

    return Tensor(out_data, x.requires_grad, (x,), backward)


def concat_last(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    req = any(p.requires_grad for p in parts)
    widths = [p.data.shape[-1] for p in parts]

    def backward(grad):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(grad[..., offset : offset + w])
            offset += w

    return Tensor(out_data, req, tuple(parts), backward)


def sum_squares(x: Tensor) -> Tensor:
    """Scalar sum of squared entries."""
    out_data = np.sum(x.data**2)

    def backward(grad):
        x._accumulate(2.0 * grad * x.data)

    return Tensor(out_data, x.requires_grad, (x,), backward)


def geman_penalty(s: Tensor, r: int) -> Tensor:
    """Summed truncated Geman penalty over a stack of square matrices.

    Backward uses the closed-form subgradient from
    :func:`alorat.linalg.geman_batch`; the SVD is computed once here.
    """
    loss, grad_s = linalg.geman_batch(s.data, r)

    def backward(grad):
        s._accumulate(grad * grad_s)

    return Tensor(loss, s.requires_grad, (s,), backward)


class Adam:
    """ADAM over a list of parameter Tensors."""

    def __init__(self, params: list[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
