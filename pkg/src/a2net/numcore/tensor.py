"""Reverse-mode differentiation over float64 numpy arrays.

A :class:`Node` holds a value, a lazily allocated gradient and a closure that
pushes its gradient back to its parents. Graphs are built eagerly by the
functions in :mod:`a2net.numcore.functional`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(())
    return arr


class Node:
    """A value in a differentiation graph.

    Leaf nodes created with ``requires_grad=True`` are parameters; interior
    nodes record the parents they were computed from and a backward closure
    returning one gradient per parent (``None`` for non-differentiable inputs).
    """

    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad", "name")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Optional[BackwardFn] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.value = as_array(value)
        self._grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g: Optional[np.ndarray]) -> None:
        self._grad = None if g is None else as_array(g)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape})"

    # operator sugar; implementations live in functional
    def __add__(self, other):
        from a2net.numcore import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from a2net.numcore import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from a2net.numcore import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from a2net.numcore import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from a2net.numcore import functional as F

        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from a2net.numcore import functional as F

        return F.matmul(self, other)

    def backward(self) -> None:
        backward(self)


def parameter(value, name: Optional[str] = None) -> Node:
    return Node(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _topological_order(root: Node) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    Gradients add onto whatever is already stored; call ``zero_grad`` on the
    parameters between steps.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    # interior gradients live here so that only leaves keep accumulated state
    pending = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._grad = g if node._grad is None else node._grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise AssertionError(
                    f"gradient shape {pg.shape} does not match value shape {parent.shape}"
                )
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()
