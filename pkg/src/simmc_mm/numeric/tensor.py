"""Dense float64 tensors with tape-free reverse-mode differentiation.

Each differentiable op is a :class:`Function` subclass with a ``forward`` on
raw arrays and a ``backward`` mapping the output gradient to input gradients.
Applying a function to tensors that require grad attaches a :class:`Node` to
the result; :class:`ComputeGraph` recovers the topological node order from a
root and :func:`backward` walks it in reverse.
"""

from __future__ import annotations

import contextlib
import math
import threading
import weakref

import numpy as np

from simmc_mm.errors import ContractError, NonFiniteError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on this thread (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "_grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self.node = None
        self.name = name

    # -- gradient buffer -------------------------------------------------
    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.data.reshape(()) if self.data.size == 1 else self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        from simmc_mm.numeric import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from simmc_mm.numeric import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from simmc_mm.numeric import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from simmc_mm.numeric import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from simmc_mm.numeric import ops

        return ops.div(self, other)

    def __neg__(self):
        from simmc_mm.numeric import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from simmc_mm.numeric import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from simmc_mm.numeric import ops

        return ops.index(self, index)

    def reshape(self, *shape):
        from simmc_mm.numeric import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from simmc_mm.numeric import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from simmc_mm.numeric import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Context:
    """Scratch space a forward pass leaves for its backward pass."""

    __slots__ = ("saved", "attrs")

    def __init__(self):
        self.saved = ()
        self.attrs = {}

    def save(self, *arrays) -> None:
        self.saved = arrays


class Node:
    # the output is held weakly: a strong ref would make tensor -> node -> tensor
    # a cycle, and whole graphs would then wait for the cyclic collector
    __slots__ = ("fn", "inputs", "ctx", "kwargs", "_output")

    def __init__(self, fn, inputs, ctx, kwargs, output):
        self.fn = fn
        self.inputs = inputs
        self.ctx = ctx
        self.kwargs = kwargs
        self._output = weakref.ref(output)

    @property
    def output(self) -> Tensor | None:
        return self._output()

    @property
    def op(self) -> str:
        return self.fn.__name__


class Function:
    """Base class for differentiable ops.

    Subclasses implement ``forward(ctx, *arrays, **kwargs) -> ndarray`` and
    ``backward(ctx, grad) -> tuple`` with one entry (array or None) per
    tensor input.
    """

    @staticmethod
    def forward(ctx, *arrays, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        ctx = Context()
        out = cls.forward(ctx, *(t.data for t in tensors), **kwargs)
        out = np.asarray(out, dtype=np.float64)
        if not math.isfinite(float(np.sum(out))) and not np.isfinite(out).all():
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        needs = grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=needs)
        if needs:
            result.node = Node(cls, tensors, ctx, kwargs, result)
        return result


class ComputeGraph:
    """The recorded nodes reachable from a root, in topological order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        order: list[Node] = []
        seen: set[int] = set()
        if root.node is None:
            return cls(order)
        # iterative post-order DFS; recursion depth would scale with model depth
        stack = [(root.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for t in node.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append((t.node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def is_topological(self) -> bool:
        position = {id(n.output): i for i, n in enumerate(self.nodes)}
        for i, node in enumerate(self.nodes):
            for t in node.inputs:
                j = position.get(id(t))
                if j is not None and j >= i:
                    return False
        return True

    def replay(self) -> list[np.ndarray]:
        """Recompute every node forward from the current input values."""
        values: dict[int, np.ndarray] = {}
        outs = []
        for node in self.nodes:
            arrays = [values.get(id(t), t.data) for t in node.inputs]
            out = np.asarray(node.fn.forward(Context(), *arrays, **node.kwargs),
                             dtype=np.float64)
            values[id(node.output)] = out
            outs.append(out)
        return outs


def backward(root: Tensor, graph: ComputeGraph | None = None) -> None:
    """Accumulate d(root)/d(leaf) into the ``grad`` of every leaf needing it."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if graph is None:
        graph = ComputeGraph.from_root(root)
    if root.node is None:
        if root.requires_grad:
            root.grad = root.grad + 1.0
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.fn.backward(node.ctx, g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.node is None:
                if t._grad is None:
                    t._grad = np.array(gi, dtype=np.float64, copy=True)
                else:
                    t._grad += gi
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
