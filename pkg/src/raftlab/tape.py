"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every operation in execution order as it happens.
``Tape.backward`` replays the records in reverse, accumulating vector-Jacobian
products into a per-node gradient table. The replay order is fixed by the
recording order, so two backward passes over the same tape produce
bit-identical gradients.

Conventions:

* everything is float64; inputs are coerced on entry and never downcast,
* arrays handed to an operation are treated as immutable from then on,
* tensors without a tape are constants and record nothing, which makes every
  op usable for plain inference as well.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateRepresentationError,
    DomainError,
    EmptyBatchError,
    ShapeError,
)

# Row norms below this are considered zero and refuse to normalize.
NORM_EPS = 1e-12

# Unit-norm tolerance for tangential_filter's precondition.
UNIT_ATOL = 1e-9


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array plus an optional position on a gradient tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = _as_f64(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.ndim != 0:
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        tag = "const" if self.node is None else f"node {self.node}"
        return f"Tensor({tag}, shape={self.data.shape})"

    # Light operator sugar; the named functions below are the real API.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return neg(self)


def constant(x) -> Tensor:
    """Wrap an array as an untracked tensor."""
    return Tensor(x)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: int, inputs: tuple[int, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        # vjp(upstream) returns one contribution per entry of `inputs`.
        self.vjp = vjp


class Gradients:
    """Read-only view of the gradient table produced by a backward pass.

    Indexing by a tracked tensor returns its gradient array; leaves the loss
    never touched (for example anything behind a stop_gradient) resolve to
    zeros of the right shape. Treat returned arrays as read-only.
    """

    def __init__(self, table: dict[int, np.ndarray], tape: "Tape"):
        self._table = table
        self._tape = tape

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.node is None:
            raise ContractError("constants have no gradient")
        if t.tape is not self._tape:
            raise ContractError("tensor belongs to a different tape")
        got = self._table.get(t.node)
        if got is None:
            return np.zeros_like(t.data)
        return got

    def __contains__(self, t: Tensor) -> bool:
        return t.node is not None and t.node in self._table


class Tape:
    """Ordered record of operations, replayed in reverse for gradients."""

    def __init__(self):
        self._n = 0
        self._records: list[_Record] = []

    def _new_node(self) -> int:
        node = self._n
        self._n += 1
        return node

    def leaf(self, data) -> Tensor:
        """Register an input tensor gradients should be collected for."""
        return Tensor(data, self, self._new_node())

    def _emit(self, data: np.ndarray, inputs: tuple[int, ...], vjp: Callable) -> Tensor:
        out = Tensor(data, self, self._new_node())
        self._records.append(_Record(out.node, inputs, vjp))
        return out

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(node) for every node that feeds the loss."""
        if loss.tape is not self:
            raise ContractError("loss was not computed on this tape")
        if loss.node is None:
            raise ContractError("loss is a constant; nothing to differentiate")
        if loss.data.ndim != 0:
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        table: dict[int, np.ndarray] = {loss.node: np.ones(())}
        for rec in reversed(self._records):
            upstream = table.get(rec.out)
            if upstream is None:
                continue
            contribs = rec.vjp(upstream)
            for node, g in zip(rec.inputs, contribs):
                if g is None:
                    continue
                have = table.get(node)
                # `+` allocates a fresh array, so stored gradients are never
                # mutated in place and repeated backward calls match bitwise.
                table[node] = g if have is None else have + g
        return table_to_gradients(table, self)


def table_to_gradients(table: dict[int, np.ndarray], tape: Tape) -> Gradients:
    return Gradients(table, tape)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.node is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ContractError("operands live on different tapes")
    return tape


def _unary(a: Tensor, data: np.ndarray, vjp_a: Callable) -> Tensor:
    tape = _tape_of(a)
    if tape is None:
        return Tensor(data)
    return tape._emit(data, (a.node,), lambda g: (vjp_a(g),))


def _binary(a: Tensor, b: Tensor, data, vjp_a, vjp_b) -> Tensor:
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(data)
    inputs = []
    slots = []
    if a.node is not None:
        inputs.append(a.node)
        slots.append(vjp_a)
    if b.node is not None:
        inputs.append(b.node)
        slots.append(vjp_b)

    def vjp(g):
        return tuple(fn(g) for fn in slots)

    return tape._emit(data, tuple(inputs), vjp)


def _require_same_shape(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over matrix rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return _binary(
            a, b, a.data + b.data, lambda g: g, lambda g: g.sum(axis=0)
        )
    raise ShapeError(f"add: cannot combine shapes {a.shape} and {b.shape}")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "sub")
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _binary(a, b, ad * bd, lambda g: g * bd, lambda g: g * ad)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _binary(a, b, ad / bd, lambda g: g / bd, lambda g: -g * ad / (bd * bd))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, -a.data, lambda g: -g)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _unary(a, a.data * c, lambda g: g * c)


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _unary(a, a.data + c, lambda g: g)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    ad, bd = a.data, b.data
    return _binary(a, b, ad @ bd, lambda g: g @ bd.T, lambda g: ad.T @ g)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: needs a matrix, got shape {a.shape}")
    return _unary(a, a.data.T.copy(), lambda g: g.T)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    # Derivative at exactly zero is defined as zero.
    mask = a.data > 0.0
    return _unary(a, np.where(mask, a.data, 0.0), lambda g: g * mask)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: input has non-positive entries")
    ad = a.data
    return _unary(a, np.log(ad), lambda g: g / ad)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _unary(a, a.data.sum(), lambda g: np.broadcast_to(g, shape))


def batch_mean(a) -> Tensor:
    """Mean of a 1-D per-sample vector; rejects empty batches."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"batch_mean: needs a 1-D input, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        raise EmptyBatchError("batch_mean: empty batch")
    return _unary(a, a.data.mean(), lambda g: np.broadcast_to(g / n, (n,)))


# ---------------------------------------------------------------------------
# rowwise helpers used by the losses


def squared_distance(a, b) -> Tensor:
    """Per-row squared Euclidean distance between two (n, d) matrices."""
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "squared_distance")
    if a.ndim != 2:
        raise ShapeError(f"squared_distance: needs matrices, got shape {a.shape}")
    diff = a.data - b.data
    out = np.einsum("ij,ij->i", diff, diff)
    return _binary(
        a,
        b,
        out,
        lambda g: 2.0 * diff * g[:, None],
        lambda g: -2.0 * diff * g[:, None],
    )


def row_dot(a, b) -> Tensor:
    """Per-row inner product of two (n, d) matrices."""
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "row_dot")
    if a.ndim != 2:
        raise ShapeError(f"row_dot: needs matrices, got shape {a.shape}")
    ad, bd = a.data, b.data
    out = np.einsum("ij,ij->i", ad, bd)
    return _binary(a, b, out, lambda g: bd * g[:, None], lambda g: ad * g[:, None])


def scale_rows(a, s) -> Tensor:
    """Multiply row i of a matrix by scalar s[i]."""
    a, s = as_tensor(a), as_tensor(s)
    if a.ndim != 2 or s.ndim != 1 or a.shape[0] != s.shape[0]:
        raise ShapeError(f"scale_rows: shapes {a.shape} and {s.shape} disagree")
    ad, sd = a.data, s.data
    return _binary(
        a,
        s,
        ad * sd[:, None],
        lambda g: g * sd[:, None],
        lambda g: np.einsum("ij,ij->i", g, ad),
    )


def row_add(a, s) -> Tensor:
    """Add scalar s[i] to every entry of row i."""
    a, s = as_tensor(a), as_tensor(s)
    if a.ndim != 2 or s.ndim != 1 or a.shape[0] != s.shape[0]:
        raise ShapeError(f"row_add: shapes {a.shape} and {s.shape} disagree")
    return _binary(
        a, s, a.data + s.data[:, None], lambda g: g, lambda g: g.sum(axis=1)
    )


def l2_normalize(a) -> Tensor:
    """Normalize each row to unit Euclidean norm.

    The backward pass uses the full Jacobian (I - y y^T) / ||x|| per row, so
    gradients flowing through the output are automatically tangential to it.
    Rows with norm below NORM_EPS raise.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"l2_normalize: needs a matrix, got shape {a.shape}")
    norms = np.linalg.norm(a.data, axis=1)
    if np.any(norms < NORM_EPS):
        worst = int(np.argmin(norms))
        raise DegenerateRepresentationError(
            f"l2_normalize: row {worst} has norm {norms[worst]:.3e} < {NORM_EPS}"
        )
    out = a.data / norms[:, None]

    def vjp(g):
        radial = np.einsum("ij,ij->i", g, out)
        return (g - radial[:, None] * out) / norms[:, None]

    return _unary(a, out, vjp)


# ---------------------------------------------------------------------------
# gradient-routing ops


def stop_gradient(a) -> Tensor:
    """Identity forward; contributes nothing to any gradient."""
    a = as_tensor(a)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(a.data)
    return tape._emit(a.data, (a.node,), lambda g: (None,))


def tangent_gate(a) -> Tensor:
    """Identity forward; backward keeps only gradient components orthogonal
    to each row of the forward value.

    The projection direction is the row normalized internally, so the gate is
    well defined even slightly off the unit sphere. Rows with vanishing norm
    pass gradients through unchanged (no direction to project against).
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"tangent_gate: needs a matrix, got shape {a.shape}")
    tape = _tape_of(a)
    if tape is None:
        return Tensor(a.data)
    norms = np.linalg.norm(a.data, axis=1)
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    dirs = np.where(norms[:, None] < NORM_EPS, 0.0, a.data / safe[:, None])

    def vjp(g):
        radial = np.einsum("ij,ij->i", g, dirs)
        return (g - radial[:, None] * dirs,)

    return tape._emit(a.data, (a.node,), vjp)


def tangential_filter(grad: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Project each gradient row onto the tangent space of the unit sphere
    at the matching row of z.

    Plain numpy utility; z rows must already be unit-norm.
    """
    grad = _as_f64(grad)
    z = _as_f64(z)
    if grad.shape != z.shape or grad.ndim != 2:
        raise ShapeError(
            f"tangential_filter: shapes {grad.shape} and {z.shape} disagree"
        )
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_ATOL):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ContractError(
            f"tangential_filter: row {worst} has norm {norms[worst]:.12f}, "
            f"expected unit within {UNIT_ATOL}"
        )
    radial = np.einsum("ij,ij->i", grad, z)
    return grad - radial[:, None] * z


# ---------------------------------------------------------------------------
# classifier head used by the linear probe


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross entropy of row-softmax logits against integer labels."""
    logits = as_tensor(logits)
    lab = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits shape {logits.shape}")
    n, k = logits.shape
    if lab.shape != (n,):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {lab.shape} for {n} rows"
        )
    if n == 0:
        raise EmptyBatchError("softmax_cross_entropy: empty batch")
    if lab.min() < 0 or lab.max() >= k:
        raise DomainError(f"softmax_cross_entropy: labels outside [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), lab]
    out = np.asarray(nll.mean())
    probs = np.exp(shifted - lse[:, None])

    def vjp(g):
        gl = probs.copy()
        gl[np.arange(n), lab] -= 1.0
        return gl * (g / n)

    return _unary(logits, out, vjp)
