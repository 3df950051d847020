"""Dense fp64 tensors with define-by-run reverse-mode differentiation.

Every op that sees an input with ``requires_grad`` records a :class:`Node`
holding its inputs and a backward rule. :func:`backward` collects the nodes
reachable from a scalar loss into a :class:`Tape`, ordered by recording
index, and walks it once in reverse.
"""

from __future__ import annotations

import itertools
import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

_node_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when an op receives inputs whose shapes do not conform."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording on this thread (inference, planning)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("index", "op", "inputs", "backward_fn", "out_ref")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable, out: "Tensor"):
        self.index = next(_node_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.out_ref = weakref.ref(out)

    def __repr__(self) -> str:
        return f"Node({self.index}, {self.op})"


class Tensor:
    """N-dimensional fp64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "_grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t._grad = None
        t._node = None
        t.name = None
        return t

    @property
    def grad(self) -> np.ndarray | None:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros(self.data.shape)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        if value is None:
            self._grad = None
            return
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError(f"grad shape {value.shape} != tensor shape {self.data.shape}")
        self._grad = value

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros(self.data.shape)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the op implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other, self))

    def __radd__(self, other):
        from . import ops
        return ops.add(_as_tensor(other, self), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor._wrap(np.full(like.shape, float(x)))
    return Tensor(x)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output and record it if any input needs grads.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    (or None) per input, in order.
    """
    req = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=req)
    if req:
        out._node = Node(op, inputs, backward_fn, out)
    return out


class Tape:
    """Recorded nodes reachable from one output, in recording order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Node] = []
        stack = [out._node] if out._node is not None else []
        while stack:
            node = stack.pop()
            if node.index in seen:
                continue
            seen.add(node.index)
            nodes.append(node)
            for t in node.inputs:
                if t._node is not None and t._node.index not in seen:
                    stack.append(t._node)
        nodes.sort(key=lambda n: n.index)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Gradients accumulate across calls; callers zero them between steps.
    Returns the traversed tape.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not require grad")
    if loss._node is None:
        loss.grad = loss.grad + 1.0
        return Tape([])
    tape = Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {loss._node.index: np.ones(loss.shape)}
    for node in reversed(tape.nodes):
        g = pending.pop(node.index, None)
        if g is None:
            continue
        out = node.out_ref()
        if out is not None:
            out._grad = g if out._grad is None else out._grad + g
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                if t._grad is None:
                    t._grad = np.array(gi, dtype=np.float64, copy=True).reshape(t.shape)
                else:
                    t._grad += gi
            else:
                k = t._node.index
                prev = pending.get(k)
                pending[k] = gi if prev is None else prev + gi
    return tape
