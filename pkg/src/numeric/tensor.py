"""
Differentiable tensors and reverse-mode gradient computation.

A ``Tensor`` wraps a float64 numpy array plus an optional gradient slot.
Every differentiable operation is a ``Function`` subclass: its ``apply``
runs the numpy forward, and when gradients are being recorded it attaches
itself to the output as the producing context. The resulting chain of
contexts *is* the computation graph:

- it is built fresh on every forward pass,
- ``build_graph`` linearises it into topological order on demand,
- ``backward`` walks that order once in reverse, then (by default) cuts the
  context links so the graph can be garbage collected.

There is no global tape, so distinct graphs may be built on distinct
threads. The only shared switch, ``no_grad``, is thread-local.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from src.errors import ContractError

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Return whether operations on this thread currently record a graph."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (inference, oracles)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """
    A shaped float64 array that can take part in gradient computation.

    Attributes:
        data: The values, row-major, always ``np.float64``.
        requires_grad: Whether gradients flow into (or through) this tensor.
        grad: Accumulated gradient with the same shape as ``data``, or None.
        name: Optional label, used for parameters.
    """

    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._ctx: Function | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._ctx = None
        return out

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent: float):
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        from src.numeric.ops import matmul
        return matmul(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)


def as_tensor(value) -> Tensor:
    """Return *value* unchanged if it is a Tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64), requires_grad=False)


# ---------------------------------------------------------------------------
# Function base class
# ---------------------------------------------------------------------------

class Function:
    """
    One differentiable operation.

    Subclasses implement ``forward`` on raw arrays and ``backward`` that maps
    the output gradient to one gradient per parent (``None`` for parents that
    receive no gradient).
    """

    op_name = "op"

    def __init__(self, parents: tuple[Tensor, ...]):
        self.parents = parents
        self.saved: tuple = ()

    def save_for_backward(self, *values) -> None:
        self.saved = values

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        parents = tuple(as_tensor(x) for x in inputs)
        fn = cls(parents)
        out_data = fn.forward(*(p.data for p in parents), **kwargs)
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor._wrap(out_data, requires_grad=track)
        if track:
            out._ctx = fn
        return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape*, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------

class Add(Function):
    op_name = "add"

    def forward(self, a, b):
        self.save_for_backward(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.saved
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Sub(Function):
    op_name = "sub"

    def forward(self, a, b):
        self.save_for_backward(a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.saved
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Mul(Function):
    op_name = "mul"

    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Div(Function):
    op_name = "div"

    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        return (
            unbroadcast(grad / b, a.shape),
            unbroadcast(-grad * a / (b * b), b.shape),
        )


class Neg(Function):
    op_name = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    op_name = "pow"

    def forward(self, a, exponent: float):
        self.save_for_backward(a, exponent)
        return a ** exponent

    def backward(self, grad):
        a, exponent = self.saved
        return (grad * exponent * a ** (exponent - 1.0),)


class Exp(Function):
    op_name = "exp"

    def forward(self, a):
        out = np.exp(a)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * out,)


class Log(Function):
    op_name = "log"

    def forward(self, a):
        self.save_for_backward(a)
        return np.log(a)

    def backward(self, grad):
        (a,) = self.saved
        return (grad / a,)


class Sum(Function):
    op_name = "sum"

    def forward(self, a, axis=None, keepdims: bool = False):
        self.save_for_backward(a.shape, _normalize_axes(axis, a.ndim), keepdims)
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axes, keepdims = self.saved
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Function):
    op_name = "mean"

    def forward(self, a, axis=None, keepdims: bool = False):
        axes = _normalize_axes(axis, a.ndim)
        count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
        self.save_for_backward(a.shape, axes, keepdims, count)
        return np.mean(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape, axes, keepdims, count = self.saved
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad / count, shape).copy(),)


class Reshape(Function):
    op_name = "reshape"

    def forward(self, a, shape):
        self.save_for_backward(a.shape)
        return np.reshape(a, shape)

    def backward(self, grad):
        (shape,) = self.saved
        return (np.reshape(grad, shape),)


class Transpose(Function):
    op_name = "transpose"

    def forward(self, a, axes=None):
        self.save_for_backward(axes)
        return np.transpose(a, axes)

    def backward(self, grad):
        (axes,) = self.saved
        if axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(axes)),)


class GetItem(Function):
    op_name = "getitem"

    def forward(self, a, index):
        self.save_for_backward(a.shape, index)
        return np.array(a[index], dtype=np.float64)

    def backward(self, grad):
        shape, index = self.saved
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, index, grad)
        return (out,)


# ---------------------------------------------------------------------------
# Graph construction and reverse traversal
# ---------------------------------------------------------------------------

@dataclass
class GraphNode:
    """One record of the computation graph: which op produced which tensor."""

    node_id: int
    op: str
    input_ids: tuple[int, ...]
    output: Tensor


@dataclass
class ComputationGraph:
    """
    Topologically ordered view of the operations leading to a root tensor.

    Leaves appear as nodes with ``op == "leaf"`` and no inputs; every other
    node lists the ids of the nodes that produced its inputs. Inputs always
    precede the nodes that consume them.
    """

    nodes: list[GraphNode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Tensor]:
        return [n.output for n in self.nodes if n.op == "leaf"]


def build_graph(root: Tensor) -> ComputationGraph:
    """Linearise the graph reachable from *root* into topological order."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor._ctx is not None:
            for parent in tensor._ctx.parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

    ids = {id(t): i for i, t in enumerate(order)}
    graph = ComputationGraph()
    for i, tensor in enumerate(order):
        if tensor._ctx is None:
            graph.nodes.append(GraphNode(i, "leaf", (), tensor))
        else:
            inputs = tuple(ids[id(p)] for p in tensor._ctx.parents)
            graph.nodes.append(GraphNode(i, tensor._ctx.op_name, inputs, tensor))
    return graph


def backward(root: Tensor, retain_graph: bool = False) -> ComputationGraph:
    """
    Populate ``grad`` on every ``requires_grad`` leaf reachable from *root*.

    Gradients accumulate into existing ``grad`` arrays, so two backward calls
    without ``zero_grad`` in between add up. Unless *retain_graph* is set the
    context links are cut afterwards and the graph is discarded.

    Raises:
        ContractError: If *root* is not a single value or carries no graph.
    """
    if root.data.size != 1:
        raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward() root does not depend on any requires_grad leaf")

    graph = build_graph(root)
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}

    for node in reversed(graph.nodes):
        tensor = node.output
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor._ctx is None:
            if tensor.requires_grad:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        parent_grads = tensor._ctx.backward(grad)
        for parent, parent_grad in zip(tensor._ctx.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad

    if not retain_graph:
        for node in graph.nodes:
            node.output._ctx = None
    return graph


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None
