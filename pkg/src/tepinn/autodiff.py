"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Every operation produces a :class:`Node` that records its parents and a
backward rule, so the growing graph is the tape for the current step.
Calling ``loss.backward()`` walks that graph once in reverse topological
order and accumulates gradients additively into every reachable node
that requires them.

Kept deliberately small: dense row-major buffers, 1-D and 2-D shapes,
no broadcasting beyond row-vector bias add/multiply.  Wide enough for a
transformer encoder, quaternion algebra on batched 4-vectors, and the
physics residuals that train against it.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

# Forward NaN/Inf guard. Physics residuals integrated through RK4 can blow
# up quietly; failing at the op that produced the bad value is worth the
# per-op check. Toggle with set_nan_guard for profiling runs.
_NAN_GUARD = True


def set_nan_guard(enabled: bool) -> None:
    global _NAN_GUARD
    _NAN_GUARD = bool(enabled)


def nan_guard_enabled() -> bool:
    return _NAN_GUARD


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonScalarLossError(ValueError):
    """backward() was called on a non-scalar node."""


class NonFiniteValueError(FloatingPointError):
    """A forward op produced NaN or Inf while the guard was enabled."""


def _as_f64(data) -> np.ndarray:
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim > 2:
        raise ShapeMismatchError(f"only 1-D/2-D tensors supported, got shape {a.shape}")
    return a


_node_counter = itertools.count()


class Node:
    """One tensor in the autodiff graph.

    Creation order doubles as the tape: ops execute after their operands
    exist, so the sequence number gives a valid topological order for the
    reverse sweep without an explicit sort of the graph structure.
    """

    __slots__ = ("value", "parents", "grad", "requires_grad", "_backward", "_grad_owned", "_seq")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple = (),
        backward: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = False,
    ):
        self.value = value
        self.parents = parents
        self.grad: np.ndarray | None = None
        self._grad_owned = True
        self._seq = next(_node_counter)
        if not requires_grad:
            for p in parents:
                if p.requires_grad:
                    requires_grad = True
                    break
        self.requires_grad = requires_grad
        self._backward = backward
        if _NAN_GUARD and not math.isfinite(value.sum()):
            raise NonFiniteValueError("non-finite value produced by forward op")

    # -- graph bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, grad: np.ndarray) -> None:
        # First contribution keeps a reference (callers never mutate what
        # they hand in after the call); later ones force a private buffer.
        if self.grad is None:
            self.grad = grad
            self._grad_owned = False
        elif not self._grad_owned:
            self.grad = self.grad + grad
            self._grad_owned = True
        else:
            self.grad += grad

    def backward(self) -> None:
        """Populate ``grad`` on every reachable node that requires it.

        Resets the gradients of the reachable subgraph first, so two
        backward passes over the same graph give identical results.
        """
        if self.value.size != 1:
            raise NonScalarLossError(f"loss must be scalar, got shape {self.value.shape}")
        order = _toposort(self)
        for n in order:
            n.grad = None
        self.grad = np.ones_like(self.value)
        for n in reversed(order):
            if n.grad is not None and n._backward is not None:
                n._backward(n.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return div_scalar(self, other)
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Node) -> list[Node]:
    # Reachable requires_grad subgraph in ascending creation order, which
    # is topologically valid because operands always precede results.
    seen: set[int] = {id(root)}
    reach: list[Node] = [root]
    stack: list[Node] = [root]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                reach.append(p)
                stack.append(p)
    reach.sort(key=lambda n: n._seq)
    return reach


def constant(data) -> Node:
    """Leaf that never receives a gradient."""
    return Node(_as_f64(data))


def parameter(data) -> Node:
    """Trainable leaf; ``backward`` accumulates into its ``grad``."""
    return Node(_as_f64(data), requires_grad=True)


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------


def _check_same_shape(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def add(a: Node, b: Node) -> Node:
    _check_same_shape("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return Node(a.value + b.value, (a, b), backward)


def sub(a: Node, b: Node) -> Node:
    _check_same_shape("sub", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return Node(a.value - b.value, (a, b), backward)


def mul(a: Node, b: Node) -> Node:
    """Elementwise product."""
    _check_same_shape("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.value)
        if b.requires_grad:
            b._accum(g * a.value)

    return Node(a.value * b.value, (a, b), backward)


def div(a: Node, b: Node) -> Node:
    """Elementwise quotient."""
    _check_same_shape("div", a, b)
    inv = 1.0 / b.value

    def backward(g):
        if a.requires_grad:
            a._accum(g * inv)
        if b.requires_grad:
            b._accum(-g * a.value * inv * inv)

    return Node(a.value * inv, (a, b), backward)


def mul_scalar(a: Node, c: float) -> Node:
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accum(g * c)

    return Node(a.value * c, (a,), backward)


def div_scalar(a: Node, c: float) -> Node:
    return mul_scalar(a, 1.0 / float(c))


def add_scalar(a: Node, c: float) -> Node:
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accum(g)

    return Node(a.value + c, (a,), backward)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {a.value.shape} and {b.value.shape} incompatible")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.value.T)
        if b.requires_grad:
            b._accum(a.value.T @ g)

    return Node(a.value @ b.value, (a, b), backward)


def transpose(a: Node) -> Node:
    def backward(g):
        if a.requires_grad:
            a._accum(g.T)

    return Node(np.ascontiguousarray(a.value.T), (a,), backward)


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = list(nodes)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                idx = (slice(lo, hi),) if axis == 0 else (slice(None), slice(lo, hi))
                n._accum(g[idx])

    return Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), backward)


def narrow(a: Node, axis: int, start: int, stop: int) -> Node:
    """Contiguous slice along one axis."""
    if axis >= a.value.ndim:
        raise ShapeMismatchError(f"slice axis {axis} out of range for shape {a.value.shape}")
    idx = (slice(start, stop),) if axis == 0 else (slice(None), slice(start, stop))

    def backward(g):
        # scatter-accumulate straight into the parent's buffer
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.value)
                a._grad_owned = True
            elif not a._grad_owned:
                a.grad = a.grad.copy()
                a._grad_owned = True
            a.grad[idx] += g

    return Node(np.ascontiguousarray(a.value[idx]), (a,), backward)


def total(a: Node) -> Node:
    """Sum of all entries, shape (1,)."""

    def backward(g):
        if a.requires_grad:
            a._accum(np.full_like(a.value, float(g[0])))

    return Node(np.array([a.value.sum()]), (a,), backward)


def mean(a: Node) -> Node:
    """Mean of all entries, shape (1,)."""
    n = a.value.size

    def backward(g):
        if a.requires_grad:
            a._accum(np.full_like(a.value, float(g[0]) / n))

    return Node(np.array([a.value.mean()]), (a,), backward)


def relu(a: Node) -> Node:
    mask = a.value > 0.0

    def backward(g):
        if a.requires_grad:
            a._accum(g * mask)

    return Node(a.value * mask, (a,), backward)


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (1.0 - out * out))

    return Node(out, (a,), backward)


def exp(a: Node) -> Node:
    out = np.exp(a.value)

    def backward(g):
        if a.requires_grad:
            a._accum(g * out)

    return Node(out, (a,), backward)


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (0.5 / out))

    return Node(out, (a,), backward)


def softmax(a: Node) -> Node:
    """Row-wise softmax of a 2-D tensor."""
    if a.value.ndim != 2:
        raise ShapeMismatchError(f"softmax expects 2-D input, got {a.value.shape}")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=1, keepdims=True)
            a._accum(out * (g - dot))

    return Node(out, (a,), backward)


def layer_norm(a: Node, eps: float = 1e-12) -> Node:
    """Row-wise standardization (zero mean, unit variance), no affine.

    Scale and shift, when wanted, are applied afterwards with
    :func:`broadcast_mul` / :func:`broadcast_add`.
    """
    if a.value.ndim != 2:
        raise ShapeMismatchError(f"layer_norm expects 2-D input, got {a.value.shape}")
    d = a.value.shape[1]
    mu = a.value.mean(axis=1, keepdims=True)
    centered = a.value - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    out = centered * inv_std

    def backward(g):
        if a.requires_grad:
            g_mean = g.mean(axis=1, keepdims=True)
            gy_mean = (g * out).mean(axis=1, keepdims=True)
            a._accum(inv_std * (g - g_mean - out * gy_mean))

    return Node(out, (a,), backward)


def _check_row_vector(op: str, a: Node, b: Node) -> None:
    if a.value.ndim != 2 or b.value.shape != (a.value.shape[1],):
        raise ShapeMismatchError(
            f"{op}: expected matrix and row vector, got {a.value.shape} and {b.value.shape}"
        )


def broadcast_add(a: Node, b: Node) -> Node:
    """Add a length-d row vector to every row of an (n, d) matrix."""
    _check_row_vector("broadcast_add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return Node(a.value + b.value[None, :], (a, b), backward)


def broadcast_mul(a: Node, b: Node) -> Node:
    """Multiply every row of an (n, d) matrix by a length-d row vector."""
    _check_row_vector("broadcast_mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.value[None, :])
        if b.requires_grad:
            b._accum((g * a.value).sum(axis=0))

    return Node(a.value * b.value[None, :], (a, b), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Node], params: Iterable[Node], eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be deterministic and close over ``params``.  Returns the
    maximum relative error over every coordinate of every parameter,
    with denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().value[0])
            flat[i] = orig - eps
            lo = float(f().value[0])
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            denom = max(abs(ga_flat[i]), abs(num), 1e-8)
            worst = max(worst, abs(ga_flat[i] - num) / denom)
    return worst
