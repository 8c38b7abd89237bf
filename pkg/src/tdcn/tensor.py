"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array plus an optional gradient slot.
Operations that receive at least one grad-requiring input record a tape
node on their output (operation tag, parent references, and a backward
closure holding whatever context the backward pass needs).  Calling
``backward()`` on a scalar loss walks the recorded graph once in reverse
topological order and accumulates gradients into every reachable tensor
that requires them.

The engine is deliberately small: elementwise add/mul, 2-D matmul,
last-axis concat, reshape, sum, log and class selection.  Everything a
network layer needs beyond these is implemented as a single fused tape
node in :mod:`tdcn.layers`.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "add",
    "mul",
    "smul",
    "matmul",
    "concat_last",
    "reshape",
    "tensor_sum",
    "log",
    "select_class",
    "zero_grads",
    "register_op",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; message names both shapes."""


class Tensor:
    """N-dimensional float64 array with an optional gradient slot.

    Invariants: ``data`` is always finite after a forward op on finite
    inputs; ``grad``, when present, has exactly ``data``'s shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._op = ""
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" op={self._op}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    # operator sugar used by tests and demo scripts
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every tensor on the tape.

        ``self`` must be a scalar produced by a taped forward pass.  Repeated
        calls without zeroing accumulate, and two calls on losses sharing a
        tape produce the same grads as one call on their sum.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward is None:
            raise ValueError("backward on a tensor detached from the tape")

        order = _topo_order(self)
        # Per-call flow table: propagation never reads .grad, so separate
        # backward calls over a shared tape stay independent.
        flow: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = flow.pop(id(node))
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flow.get(id(parent))
                # out-of-place: backward closures may return aliased arrays
                # (e.g. the same object for both addends), so never mutate pg
                flow[id(parent)] = pg if acc is None else acc + pg


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the grad-requiring subgraph under root."""
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def register_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    """Wrap an op result, recording a tape node when any input requires grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not match")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return register_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return register_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def smul(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no tape node for the constant)."""
    c = float(c)
    return register_op(a.data * c, (a,), lambda g: (g * c,), "smul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul: expects 2-D operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dims of {a.data.shape} and {b.data.shape} do not match"
        )
    ad, bd = a.data, b.data
    return register_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def concat_last(*tensors: Tensor) -> Tensor:
    """Concatenate along the last axis; all other axes must agree."""
    if not tensors:
        raise ValueError("concat_last needs at least one tensor")
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last: leading dims {tensors[0].data.shape} and {t.data.shape} do not match"
            )
    widths = [t.data.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g: np.ndarray):
        return np.split(g, splits, axis=-1)

    return register_op(np.concatenate([t.data for t in tensors], axis=-1), tensors, backward, "concat")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return register_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.data.shape
    return register_op(
        np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum"
    )


def log(a: Tensor) -> Tensor:
    ad = a.data
    return register_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def select_class(a: Tensor, labels) -> Tensor:
    """Select one entry per row: ``a[label]`` for 1-D, ``a[i, labels[i]]`` for 2-D."""
    if a.data.ndim == 1:
        idx = int(labels)

        def backward_1d(g: np.ndarray):
            out = np.zeros_like(a.data)
            out[idx] = float(g)
            return (out,)

        return register_op(np.asarray(a.data[idx]), (a,), backward_1d, "select")
    if a.data.ndim == 2:
        idx = np.asarray(labels, dtype=np.intp)
        if idx.shape != (a.data.shape[0],):
            raise ShapeError(
                f"select_class: labels shape {idx.shape} does not match rows of {a.data.shape}"
            )
        rows = np.arange(a.data.shape[0])

        def backward_2d(g: np.ndarray):
            out = np.zeros_like(a.data)
            out[rows, idx] = g
            return (out,)

        return register_op(a.data[rows, idx], (a,), backward_2d, "select")
    raise ShapeError(f"select_class: expects 1-D or 2-D input, got shape {a.data.shape}")


def zero_grads(params: Sequence[Tensor]) -> None:
    """Clear every grad slot to zeros (allocating slots that were never filled)."""
    for p in params:
        p.grad = np.zeros_like(p.data)
