"""Float64 tensor with a reverse-mode gradient tape.

Every differentiable op builds its result through :func:`make_result`, which
records the parents and a closure mapping the output gradient to one gradient
per parent. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Gradients accumulate into ``.grad`` of leaf tensors only.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backprop ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output", self.shape)
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError("seed gradient shape differs from output", grad.shape, self.shape)

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

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
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
                if pg.shape != parent.shape:
                    pg = unbroadcast(pg, parent.shape)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        return make_result(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        return make_result(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        return make_result(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return make_result(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return make_result(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return make_result(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def square(self) -> "Tensor":
        a = self.data
        return make_result(a * a, (self,), lambda g: (2.0 * a * g,))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return make_result(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return make_result(np.log(a), (self,), lambda g: (g / a,))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return make_result(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return make_result(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def flatten_batch(self) -> "Tensor":
        """Collapse every axis after the first."""
        return self.reshape(self.shape[0], -1)

    def clip(self, low: float, high: float) -> "Tensor":
        a = self.data
        inside = (a >= low) & (a <= high)
        return make_result(np.clip(a, low, high), (self,), lambda g: (g * inside,))

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return make_result(self.data[index], (self,), backward)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return make_result(
        np.where(pick_a, a.data, b.data), (a, b), lambda g: (g * pick_a, g * ~pick_a)
    )


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def make_result(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out
