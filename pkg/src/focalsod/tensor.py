"""Dense tensor with reverse-mode automatic differentiation.

Activations use the axis order ``(n, c, h, w)``: slice (or batch) count,
channels, height, width.  Parameters and scalars are plain tensors of any
rank.  Every differentiable operation lives in :mod:`focalsod.ops` and
records a :class:`Node` on its output; :meth:`Tensor.backward` replays the
recorded nodes in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class ConfigError(ValueError):
    """Raised for invalid operation or layer configuration."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """Backpropagation record: parent tensors plus the local gradient rule.

    ``backward_fn`` receives the gradient w.r.t. the output and returns one
    gradient array (or ``None``) per parent, in parent order.
    """

    __slots__ = ("parents", "backward_fn", "name")

    def __init__(self, parents: Sequence["Tensor"], backward_fn: Callable, name: str):
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    # construction helpers -------------------------------------------------
    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, *shape: int, requires_grad: bool = False, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def full(cls, shape: Sequence[int], value: float, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.full(tuple(shape), value, dtype=dtype))

    # basic properties -----------------------------------------------------
    @property
    def shape(self) -> tuple:
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

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # autograd -------------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> "Graph":
        """Backpropagate from this tensor; returns the replayed graph."""
        graph = Graph.from_output(self)
        graph.backward(self, grad)
        return graph

    # operator sugar (implemented in ops) ----------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum_all(self)

    def mean(self):
        from . import ops
        return ops.mean_all(self)


class Graph:
    """Topologically ordered backpropagation records of one forward pass."""

    def __init__(self, order: list):
        # every tensor appears after all of its parents
        self.order = order

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: list = []
        seen: set = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for p in t.node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return sum(1 for t in self.order if t.node is not None)

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
        if not loss.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not track gradients")
        if grad is None:
            if loss.size != 1:
                raise RuntimeError(f"backward() needs an explicit gradient for non-scalar shape {loss.shape}")
            grad = np.ones_like(loss.data)
        # intermediate gradients live here; leaves accumulate into .grad
        pending = {id(loss): np.asarray(grad, dtype=loss.dtype)}
        for t in reversed(self.order):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            parent_grads = t.node.backward_fn(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    """Wrap an op result, attaching a graph node when any parent tracks grads."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(parents, backward_fn, name)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))
