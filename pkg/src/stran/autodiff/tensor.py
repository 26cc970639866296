"""Tensor type, recorded graph and the reverse sweep.

Every differentiable primitive is a :class:`Function` subclass whose
``backward`` is written in terms of other primitives.  Running the sweep with
recording switched on therefore yields gradients that are themselves part of
a graph, which is what the gradient penalty needs.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterable, Optional, Sequence

import numpy as np

COMPUTE_DTYPE = np.float32
CHECK_DTYPE = np.float64

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def set_grad_enabled(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, op: str, first, second, detail: str = ""):
        self.op = op
        self.first = tuple(first)
        self.second = tuple(second)
        msg = f"{op}: incompatible shapes {self.first} and {self.second}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    """Dense array plus the bookkeeping needed for reverse-mode differentiation.

    The payload is treated as immutable once constructed; only the optimizer
    replaces ``Parameter.data`` wholesale.
    """

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(COMPUTE_DTYPE)
        if any(s < 1 for s in arr.shape):
            raise ShapeError("Tensor", arr.shape, (), "all dimensions must be >= 1")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.add_scalar(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.scale(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return ops.scale(self, 1.0 / other)

    def sum(self):
        from . import ops
        return ops.reduce(self, "sum")

    def mean(self):
        from . import ops
        return ops.reduce(self, "mean")

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """Trainable leaf with a zero-initialised gradient slot of the same shape."""

    __slots__ = ()

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.data = np.ascontiguousarray(self.data)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Function:
    """A differentiable primitive.

    Subclasses implement ``forward`` on raw arrays and ``backward`` on Tensors.
    ``needs_input_grad`` is filled in by the sweep so backward can skip work.
    """

    def __init__(self, **kwargs):
        self.__dict__.update(kwargs)
        self.inputs: tuple = ()
        self.needs_input_grad: tuple = ()

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(**kwargs)
        fn.inputs = inputs
        out = fn.forward(*[t.data for t in inputs])
        requires = is_grad_enabled() and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=requires)
        if requires:
            result._ctx = fn
        else:
            fn.inputs = ()
        return result

    def forward(self, *arrays: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def backward(self, grad: Tensor) -> Sequence[Optional[Tensor]]:  # pragma: no cover
        raise NotImplementedError


def _topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that carry a Function, outputs first."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or node._ctx is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in reversed(node._ctx.inputs):
            if inp.requires_grad and inp._ctx is not None and id(inp) not in seen:
                stack.append((inp, False))
    order.reverse()
    return order


def _sweep(root: Tensor, seed: Tensor, create_graph: bool, relevant=None, capture=None) -> dict:
    """Propagate ``seed`` from ``root`` backwards; returns leaf id -> (leaf, grad).

    ``capture`` names an interior node whose gradient is returned like a leaf's.
    """
    order = _topological_order(root)
    grads = {id(root): seed}
    leaves: dict = {}
    with set_grad_enabled(create_graph):
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node is capture:
                leaves[id(node)] = (node, g)
                continue
            fn = node._ctx
            fn.needs_input_grad = tuple(
                inp.requires_grad and (relevant is None or id(inp) in relevant)
                for inp in fn.inputs
            )
            in_grads = fn.backward(g)
            for inp, need, ig in zip(fn.inputs, fn.needs_input_grad, in_grads):
                if not need or ig is None:
                    continue
                if inp._ctx is None:
                    if id(inp) in leaves:
                        leaves[id(inp)] = (inp, leaves[id(inp)][1] + ig)
                    else:
                        leaves[id(inp)] = (inp, ig)
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + ig
                else:
                    grads[id(inp)] = ig
    if root._ctx is None and root.requires_grad:
        leaves[id(root)] = (root, seed)
    return leaves


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.size != 1:
        raise ShapeError("backward", root.shape, (), "root must be a scalar")
    if not root.requires_grad:
        return
    seed = Tensor(np.ones_like(root.data))
    for leaf, g in _sweep(root, seed, create_graph=False).values():
        if leaf.grad is None:
            leaf.grad = np.array(g.data, copy=True)
        else:
            leaf.grad = leaf.grad + g.data


def input_gradient(root: Tensor, wrt: Tensor, create_graph: bool = True, allow_unused: bool = False) -> Tensor:
    """d(root)/d(wrt) as a Tensor whose construction is itself recorded.

    Only paths that pass through ``wrt`` are swept, so parameter gradients are
    not accumulated as a side effect.  With ``allow_unused`` a root that does
    not depend on ``wrt`` yields zeros instead of an error.
    """
    if root.size != 1:
        raise ShapeError("input_gradient", root.shape, (), "root must be a scalar")
    order = _topological_order(root)
    relevant = {id(wrt)}
    for node in reversed(order):
        if any(id(inp) in relevant for inp in node._ctx.inputs):
            relevant.add(id(node))
    if id(root) not in relevant and root is not wrt:
        if allow_unused:
            return Tensor(np.zeros_like(wrt.data))
        raise ValueError("input_gradient: wrt does not participate in the graph of root")
    if root is wrt:
        return Tensor(np.ones_like(wrt.data))
    seed = Tensor(np.ones_like(root.data))
    leaves = _sweep(root, seed, create_graph=create_graph, relevant=relevant, capture=wrt)
    return leaves[id(wrt)][1]


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
