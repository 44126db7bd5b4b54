"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape: ops build a graph of Tensors, backward() walks it in reverse
topological order. Only the operations the shipped classifier architectures
need are provided. Inside a no_grad() block ops skip tape construction,
which keeps repeated loss evaluation cheap for finite-difference checks.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, ShapeError

# Thread-local so concurrent eval-mode readers cannot race the flag.
_state = threading.local()


def _grad_on() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    def __enter__(self):
        self._prev = _grad_on()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        if _grad_on():
            self._parents = _parents
            self._backward = _backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every parent tensor."""
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(data) -> Tensor:
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    out_data = a.data * factor

    def backward(g):
        a._accumulate(g * factor)

    return Tensor(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b with b strictly 2-D; a may carry leading batch axes."""
    if b.data.ndim != 2:
        raise ShapeError(f"matmul weight must be 2-D, got {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        k = a.data.shape[-1]
        m = g.shape[-1]
        b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, m))

    return Tensor(out_data, (a, b), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            t._accumulate(g[tuple(index)])
            offset += size

    return Tensor(out_data, tuple(tensors), backward)


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of `size` entries along one axis."""
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)
    out_data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)

    return Tensor(out_data, (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            for ax in sorted(ax % a.data.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out_data, (a,), backward)


def mean_(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.data.size)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    factor = np.where(a.data >= 0, 1.0, slope)
    out_data = a.data * factor

    def backward(g):
        a._accumulate(g * factor)

    return Tensor(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate((g - inner) * out_data)

    return Tensor(out_data, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a mask drawn from the supplied generator."""
    if p <= 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out_data = a.data * mask

    def backward(g):
        a._accumulate(g * mask)

    return Tensor(out_data, (a,), backward)


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample softmax cross-entropy; logits (B, C), labels (B,) ints."""
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.data.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch {logits.data.shape[0]}"
        )
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out_data = lse - z[np.arange(z.shape[0]), labels]

    def backward(g):
        probs = np.exp(z - zmax)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(z.shape[0]), labels] -= 1.0
        logits._accumulate(probs * g[:, None])

    return Tensor(out_data, (logits,), backward)
