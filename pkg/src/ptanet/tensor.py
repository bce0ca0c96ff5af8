"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape: every differentiable op records a closure on the
output tensor while grad recording is enabled, and ``backward`` replays the
tape in reverse topological order. The tape is rebuilt on every forward, so a
network whose executed path changes between iterations needs no special
handling.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_grad_enabled = True

# Sentinel marking a node whose tape entry was already replayed.
_CONSUMED = object()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float32 array, optionally tracked by the autograd tape.

    ``data`` is always a C-contiguous float32 ndarray. ``grad`` is filled by
    ``backward`` for leaves with ``requires_grad`` and has the same shape as
    ``data``. Non-leaf tensors keep their gradient only transiently during a
    backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return self._backward is None and not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def backward(self) -> None:
        backward(self)


def _track(parents: Sequence[Tensor]) -> bool:
    return _grad_enabled and any(p.requires_grad for p in parents)


def _record(out_data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap ``out_data`` in a Tensor, attaching the tape node when tracking.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per
    parent, in parent order.
    """
    out = Tensor(out_data)
    if _track(parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (skip connections)."""
    _check_same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale_mean2(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise average 0.5*(a+b); both branch outputs keep their scale."""
    _check_same_shape(a, b, "scale_mean2")
    out = (a.data + b.data) * np.float32(0.5)
    half = np.float32(0.5)
    return _record(out, (a, b), lambda g: (g * half, g * half))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product [N,K] @ [K,M] -> [N,M]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = a.shape
    out = np.asarray(a.data.sum(), dtype=np.float32)
    return _record(out, (a,), lambda g: (np.broadcast_to(g, shape).astype(np.float32),))


def _toposort(root: Tensor) -> list:
    """Tensors reachable from ``root`` through the tape, in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    # Iterative DFS; the tape for a deep network exceeds the recursion limit.
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be scalar. Gradients of leaves used along several paths are
    summed. The tape is single-use: replaying it raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._backward is _CONSUMED:
        raise RuntimeError("backward: graph already consumed")
    if loss._backward is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        fn = node._backward
        if fn is _CONSUMED:
            raise RuntimeError("backward: graph already consumed")
        if fn is None:
            # Leaf: accumulate into .grad. The first contribution is copied
            # because a backward_fn may hand the same array to several
            # parents; .grad must own its buffer before the optimizer sees it.
            if node.requires_grad:
                node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        parent_grads = fn(g)
        node._backward = _CONSUMED
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                # Out-of-place: a backward_fn may hand the same array to
                # several parents, so stored gradients are never mutated.
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
