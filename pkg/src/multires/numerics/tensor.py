"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps an ndarray plus an optional backward closure; operations in
`multires.numerics.ops` build the tape implicitly.  Gradients flow back with
`backward(loss)`.  Leaves that should receive gradients are `Parameter`
instances, which keep a persistent, explicitly zeroed gradient buffer.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError

# When enabled, every op output is checked for NaN/Inf (tests turn this on).
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, requires_grad=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self._parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad
        self.grad = None
        if _DEBUG_CHECKS and not np.all(np.isfinite(self.data)):
            raise NumericError("non-finite value produced by an operation")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate_grad(self, g) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Trainable leaf: named value plus a persistent same-shape gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def backward(out: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar output."""
    if out.data.size != 1:
        raise NumericError(f"backward requires a scalar output, got shape {out.data.shape}")
    if not np.all(np.isfinite(out.data)):
        raise NumericError("backward on a non-finite output")
    # Iterative post-order topological sort (tapes can be long).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
