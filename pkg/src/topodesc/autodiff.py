"""Reverse-mode differentiation over numpy arrays with an explicit tape.

Nodes are appended to the tape in creation order, which is a valid
topological order, so the backward pass is a single deterministic reverse
sweep. One tape lives for one training step and is dropped afterwards.

Kink conventions: |x| has subgradient 0 at x = 0, max(x, 0) passes gradient
only where x > 0, sqrt passes gradient only where its argument is positive,
and clip passes gradient strictly inside the interval.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SingularSystemError


class Tape:
    """Ordered record of differentiable operations for one step."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def add(self, node: "Tensor") -> None:
        self.nodes.append(node)


class Tensor:
    """A value in the graph, with a gradient slot filled by the backward sweep."""

    __slots__ = ("value", "grad", "tape", "requires_grad", "_backward")

    def __init__(self, value, tape: Tape | None, requires_grad: bool):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.requires_grad = requires_grad
        self._backward = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    # Operator sugar; plain numbers and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other, self.tape))

    def __radd__(self, other):
        return add(_wrap(other, self.tape), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.tape))

    def __rsub__(self, other):
        return sub(_wrap(other, self.tape), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.tape))

    def __rmul__(self, other):
        return mul(_wrap(other, self.tape), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.tape))


def constant(tape: Tape, value) -> Tensor:
    return Tensor(value, tape, requires_grad=False)


def leaf(tape: Tape, value) -> Tensor:
    """A trainable input; its .grad is populated by backward()."""
    return Tensor(value, tape, requires_grad=True)


def _wrap(x, tape: Tape) -> Tensor:
    return x if isinstance(x, Tensor) else constant(tape, x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _node(tape: Tape, value, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(value, tape, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._backward = backward_fn
        tape.add(out)
    return out


def backward(tape: Tape, root: Tensor | None = None, adjoint=1.0) -> None:
    """Reverse sweep seeding the root (default: last recorded node).

    `adjoint` may be a scalar or an array broadcastable to the root's shape,
    making the sweep a general vector-Jacobian product. An empty tape, or a
    root that nothing trainable feeds, is a no-op: every leaf keeps a zero
    (None) gradient.
    """
    if not tape.nodes:
        return
    if root is None:
        root = tape.nodes[-1]
    if not root.requires_grad:
        return
    seed = np.asarray(adjoint, dtype=root.value.dtype)
    root._accumulate(np.broadcast_to(seed, root.value.shape).copy())
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    value = a.value + b.value

    def back(g):
        a._accumulate(_unbroadcast(g, a.value.shape))
        b._accumulate(_unbroadcast(g, b.value.shape))

    return _node(a.tape or b.tape, value, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    value = a.value - b.value

    def back(g):
        a._accumulate(_unbroadcast(g, a.value.shape))
        b._accumulate(_unbroadcast(-g, b.value.shape))

    return _node(a.tape or b.tape, value, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    value = a.value * b.value

    def back(g):
        a._accumulate(_unbroadcast(g * b.value, a.value.shape))
        b._accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _node(a.tape or b.tape, value, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    value = a.value / b.value

    def back(g):
        a._accumulate(_unbroadcast(g / b.value, a.value.shape))
        b._accumulate(_unbroadcast(-g * value / b.value, b.value.shape))

    return _node(a.tape or b.tape, value, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    value = a.value @ b.value

    def back(g):
        a._accumulate(_unbroadcast(g @ b.value.swapaxes(-1, -2), a.value.shape))
        b._accumulate(_unbroadcast(a.value.swapaxes(-1, -2) @ g, b.value.shape))

    return _node(a.tape or b.tape, value, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    value = a.value.swapaxes(-1, -2)

    def back(g):
        a._accumulate(g.swapaxes(-1, -2))

    return _node(a.tape, value, (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    value = a.value.reshape(shape)

    def back(g):
        a._accumulate(g.reshape(a.value.shape))

    return _node(a.tape, value, (a,), back)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.value.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.value.shape).copy())

    return _node(a.tape, value, (a,), back)


def abs_(a: Tensor) -> Tensor:
    value = np.abs(a.value)

    def back(g):
        a._accumulate(g * np.sign(a.value))

    return _node(a.tape, value, (a,), back)


def sqrt_(a: Tensor) -> Tensor:
    value = np.sqrt(a.value)

    def back(g):
        safe = np.where(a.value > 0, value, 1.0)
        a._accumulate(np.where(a.value > 0, 0.5 * g / safe, 0.0))

    return _node(a.tape, value, (a,), back)


def tanh_(a: Tensor) -> Tensor:
    value = np.tanh(a.value)

    def back(g):
        a._accumulate(g * (1.0 - value * value))

    return _node(a.tape, value, (a,), back)


def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.value, 0.0)

    def back(g):
        a._accumulate(g * (a.value > 0))

    return _node(a.tape, value, (a,), back)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    value = np.clip(a.value, lo, hi)

    def back(g):
        a._accumulate(g * ((a.value > lo) & (a.value < hi)))

    return _node(a.tape, value, (a,), back)


def take(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather a[indices]; backward scatter-adds into the source."""
    idx = np.asarray(indices)
    value = a.value[idx]

    def back(g):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.value)
        np.add.at(buf, idx, g)
        a._accumulate(buf)

    return _node(a.tape, value, (a,), back)


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select by a fixed boolean mask (not differentiated)."""
    value = np.where(mask, a.value, b.value)

    def back(g):
        a._accumulate(_unbroadcast(g * mask, a.value.shape))
        b._accumulate(_unbroadcast(g * ~mask, b.value.shape))

    return _node(a.tape or b.tape, value, (a, b), back)


def detach(a: Tensor) -> Tensor:
    """Cut the graph: same value, no gradient flow."""
    return Tensor(a.value, a.tape, requires_grad=False)


# ---------------------------------------------------------------------------
# batched ops for the per-anchor affine fits


def gram_batched(d: Tensor) -> Tensor:
    """S_i = D_i D_i^T for a stack of difference matrices (n, k, dim).

    The lower triangle is mirrored so every S_i is bitwise symmetric.
    """
    full = d.value @ d.value.swapaxes(-1, -2)
    lower = np.tril(full)
    value = lower + np.tril(full, -1).swapaxes(-1, -2)

    def back(g):
        d._accumulate((g + g.swapaxes(-1, -2)) @ d.value)

    return _node(d.tape, value, (d,), back)


def trace_batched(s: Tensor) -> Tensor:
    """Traces of a stack of square matrices (n, k, k) -> (n,)."""
    k = s.value.shape[-1]
    idx = np.arange(k)
    value = s.value[:, idx, idx].sum(axis=-1)

    def back(g):
        buf = np.zeros_like(s.value)
        buf[:, idx, idx] = g[:, None]
        s._accumulate(buf)

    return _node(s.tape, value, (s,), back)


def solve_chol_batched(m: Tensor, rhs: np.ndarray, workers: int = 1) -> Tensor:
    """Solve M_i x_i = rhs for a stack of symmetric systems via Cholesky.

    Factorizations run in double precision regardless of the tape dtype and
    are reused by the backward pass: with g the output adjoint,
    grad_rhs-side solve gb = M^-1 g gives grad_M = -gb x^T. The right-hand
    side is a fixed vector, not a graph node.
    """
    m64 = np.asarray(m.value, dtype=np.float64)
    rhs64 = np.asarray(rhs, dtype=np.float64)
    n, k = m64.shape[0], m64.shape[1]
    factors: list = [None] * n
    x64 = np.empty((n, k))

    def factor_one(i: int) -> None:
        try:
            factors[i] = cho_factor(m64[i], lower=True)
        except np.linalg.LinAlgError:
            raise SingularSystemError(
                f"symmetric factorization failed for anchor {i}"
            ) from None
        x64[i] = cho_solve(factors[i], rhs64)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(factor_one, range(n)))
    else:
        for i in range(n):
            factor_one(i)

    value = x64.astype(m.value.dtype, copy=False)

    def back(g):
        g64 = np.asarray(g, dtype=np.float64)
        gm = np.empty_like(m64)
        for i in range(n):
            gb = cho_solve(factors[i], g64[i])
            gm[i] = -np.outer(gb, x64[i])
        m._accumulate(gm.astype(m.value.dtype, copy=False))

    return _node(m.tape, value, (m,), back)
