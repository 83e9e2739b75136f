"""Minimal dense tensor with reverse-mode differentiation.

Only the handful of operations the video autoencoder needs are differentiable.
Every op returns a new :class:`Tensor` whose ``_parents``/``_backward`` pair is
the recorded graph edge; :func:`backward` replays that record in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

MAX_NDIM = 5

_default_dtype = np.dtype(np.float32)


def default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def check_mode() -> Iterator[None]:
    """Create tensors in 64-bit precision while active (used for gradient checks)."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _default_dtype = prev


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class GraphError(RuntimeError):
    """Raised on invalid use of the recorded graph (e.g. backward on a detached tensor)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str = "",
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data)
        if not _parents:
            arr = np.ascontiguousarray(arr, dtype=_default_dtype)
        if arr.ndim > MAX_NDIM:
            raise ShapeError(f"tensor has {arr.ndim} axes, at most {MAX_NDIM} supported")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data, t.grad, t.requires_grad = self.data, None, False
        t.name, t.op, t._parents, t._backward = self.name, "leaf", (), None
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{rg})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, k: float) -> "Tensor":
        return mul_scalar(self, k)

    __rmul__ = __mul__


def _not_scalar(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Graph:
    """Ordered record of the operations that produced ``root``.

    ``nodes`` is a topological order (inputs before outputs); reverse replay
    visits every recorded operation exactly once.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; the AE graph is shallow but recursion limits bite on long chains
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents and n.requires_grad]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Graph | None = None) -> Graph:
    """Populate ``.grad`` of every leaf that requires grad with d(loss)/d(leaf).

    Gradients accumulate into existing ``.grad`` buffers, so call ``zero_grad``
    between optimizer steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward called on a tensor that is detached from any parameter")
    graph = graph if graph is not None else Graph(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return graph


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return Tensor(a.data + b.data, _parents=(a, b), _backward=lambda g: (g, g), op="add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return Tensor(a.data - b.data, _parents=(a, b), _backward=lambda g: (g, -g), op="sub")


def mul_scalar(a: Tensor, k: float) -> Tensor:
    k = a.data.dtype.type(k)
    return Tensor(a.data * k, _parents=(a,), _backward=lambda g: (g * k,), op="mul_scalar")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0).astype(a.dtype), _parents=(a,),
                  _backward=lambda g: (g * mask,), op="relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    slope = a.data.dtype.type(slope)
    mask = a.data > 0
    out = np.where(mask, a.data, a.data * slope)
    return Tensor(out, _parents=(a,), _backward=lambda g: (np.where(mask, g, g * slope),),
                  op="leaky_relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out * (1 - out),), op="sigmoid")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor(a.data.sum(dtype=a.dtype).reshape(()), _parents=(a,),
                  _backward=lambda g: (np.broadcast_to(g, shape).copy(),), op="sum")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over every element. Differentiable w.r.t. ``pred`` only."""
    _check_same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.dot(diff.reshape(-1), diff.reshape(-1)) / n, dtype=pred.dtype)

    def _bw(g):
        return (g * (2.0 / n) * diff).astype(pred.dtype), None

    return Tensor(out, _parents=(pred, target), _backward=_bw, op="mse_loss")
