"""Dense tensors with a small reverse-mode autodiff engine.

Every differentiable primitive lives in :mod:`dffn.ops` or :mod:`dffn.fourier`
and records one :class:`Node` per call. ``backward`` walks the recorded
:class:`Graph` in reverse topological order and accumulates gradients into
leaf tensors (parameters, or inputs created with ``requires_grad=True``).

Arrays are float32 by default. The finite-difference oracle switches the
default to float64 via :func:`precision`; every primitive preserves the dtype
of its inputs, so the same code path runs in both precisions.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_uid = itertools.count()
_state = {"dtype": np.dtype(np.float32), "grad_enabled": True, "deterministic": True}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with a primitive."""


def default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference, target construction)."""
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


def grad_enabled() -> bool:
    return _state["grad_enabled"]


def set_deterministic(flag: bool) -> None:
    """Select deterministic mode.

    In deterministic mode BLAS is pinned to a single thread during training
    steps so that reductions run in a fixed order (see ``dffn.train``).
    """
    _state["deterministic"] = bool(flag)


def is_deterministic() -> bool:
    return _state["deterministic"]


class Tensor:
    """An N-dimensional array plus the bookkeeping autodiff needs."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "_uid", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        want = np.dtype(dtype) if dtype is not None else default_dtype()
        if arr.dtype != want:
            arr = arr.astype(want)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: Node | None = None
        self._uid = next(_uid)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._node = None
        t._uid = next(_uid)
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def backward(self) -> None:
        backward(self)

    # Operator sugar; the primitives themselves live in dffn.ops.
    def __add__(self, other):
        from dffn import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from dffn import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from dffn import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


class Param(Tensor):
    """Learnable leaf tensor; ``grad`` always has the shape of ``data``."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)
        self.grad = np.zeros_like(self.data)

    def assign(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ShapeError(f"{self.name}: cannot assign shape {value.shape} to {self.data.shape}")
        self.data = value
        if self.grad is None or self.grad.shape != value.shape:
            self.grad = np.zeros_like(value)


@dataclass(eq=False)
class Node:
    """One executed primitive.

    ``backward_fn`` receives one gradient array per output and returns one
    gradient (or ``None``) per input.
    """

    op: str
    inputs: tuple[Tensor, ...]
    out_uids: tuple[int, ...]
    out_shapes: tuple[tuple[int, ...], ...]
    out_dtype: np.dtype
    backward_fn: Callable[[Sequence[np.ndarray]], Sequence[np.ndarray | None]]


def record(op: str, inputs: Sequence[Tensor], outputs: Sequence[np.ndarray], backward_fn) -> list[Tensor]:
    """Wrap raw output arrays as tensors and, when needed, attach a graph node."""
    outs = [Tensor._wrap(o) for o in outputs]
    if _state["grad_enabled"] and any(t.requires_grad for t in inputs):
        node = Node(
            op=op,
            inputs=tuple(inputs),
            out_uids=tuple(o._uid for o in outs),
            out_shapes=tuple(o.shape for o in outs),
            out_dtype=outs[0].dtype,
            backward_fn=backward_fn,
        )
        for o in outs:
            o.requires_grad = True
            o._node = node
    return outs


@dataclass
class Graph:
    """Executed primitives reachable from a root, in topological order."""

    nodes: list[Node] = field(default_factory=list)

    @classmethod
    def build(cls, root: Tensor) -> "Graph":
        order: list[Node] = []
        seen: set[int] = set()
        if root._node is None:
            return cls(order)
        # iterative post-order DFS over producer nodes
        stack: list[tuple[Node, bool]] = [(root._node, False)]
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
                if t._node is not None and id(t._node) not in seen:
                    stack.append((t._node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]


def backward(root: Tensor, graph: Graph | None = None) -> Graph:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls without zeroing add up. Returns the graph that was walked.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if graph is None:
        graph = Graph.build(root)
    if root._node is None:
        if root.requires_grad:
            _accumulate_leaf(root, np.ones_like(root.data))
        return graph

    pending: dict[int, np.ndarray] = {root._uid: np.ones_like(root.data)}
    for node in reversed(graph.nodes):
        out_grads = [pending.pop(uid, None) for uid in node.out_uids]
        if all(g is None for g in out_grads):
            continue
        out_grads = [
            g if g is not None else np.zeros(shape, dtype=node.out_dtype)
            for g, shape in zip(out_grads, node.out_shapes)
        ]
        in_grads = node.backward_fn(out_grads)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise ShapeError(f"{node.op}: gradient shape {g.shape} != input shape {t.shape}")
            if t._node is None:
                _accumulate_leaf(t, g)
            elif t._uid in pending:
                pending[t._uid] = pending[t._uid] + g
            else:
                pending[t._uid] = g
    return graph


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g
