"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus the bookkeeping needed to replay the
computation in reverse: the tensors it was computed from and one
vector-Jacobian product per input. The graph is rebuilt dynamically on
every forward pass, so episodes of different lengths need no padding.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the operation's domain (log of <=0, NaN input)."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that can participate in the gradient tape.

    Attributes:
        data: the numpy value, always float64.
        grad: accumulated gradient buffer (same shape), or None.
        requires_grad: whether backward should populate ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjps: tuple = ()
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """A view of the same data with no tape node and no gradient."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def from_op(data: np.ndarray, parents: Sequence[Tensor],
            vjps: Sequence[Callable[[np.ndarray], np.ndarray]], op: str) -> Tensor:
    """Wrap an op result, recording parents and per-input VJPs when taping."""
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
        out._op = op
    return out


class GradTape:
    """The operations reachable from a root tensor, linearized topologically.

    Every node appears after all nodes that produced its inputs, so a single
    reverse sweep propagates gradients correctly.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "GradTape":
        order: list = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    def backward(self, root: Tensor) -> None:
        # Sweep-local buffers keep repeated backward calls strictly additive:
        # each call contributes exactly one gradient, folded into .grad at the end.
        local: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = local.get(id(node))
            if g is None or not node._parents:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                pg = vjp(g)
                key = id(parent)
                prev = local.get(key)
                local[key] = pg if prev is None else prev + pg
        for node in self.nodes:
            if not node.requires_grad:
                continue
            g = local.get(id(node))
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; gradients accumulate additively."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    GradTape.trace(loss).backward(loss)
