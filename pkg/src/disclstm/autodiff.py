"""Dense float64 tensors with reverse-mode differentiation.

The op catalog is deliberately small: exactly what the graph-attention
encoder, the recurrent cell, the classifier head, and the cross-entropy
objective need (matmul, add, concat, hadamard, scale, sigmoid, tanh,
scalar_mean, row_select, softmax_masked, nll_logits). There is no
broadcasting, no GPU path, and no higher-order gradients.

Every value lives on a :class:`Tape`. Building ops appends nodes in
creation order, which is already a topological order, so ``backward``
is a single reverse sweep. A tape can run backward once; rebuild the
graph to differentiate again.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NonFiniteError(ArithmeticError):
    """A forward evaluation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: double backward, or mixing values from different tapes."""


class DiffValue:
    """A scalar, vector, or matrix recorded on a tape.

    ``data`` is the forward value (float64, checked finite on creation),
    ``grad`` is a same-shape accumulator that ``Tape.backward`` fills in.
    """

    __slots__ = ("tape", "data", "grad", "_backward")

    def __init__(self, tape: "Tape", data: np.ndarray,
                 backward: Callable[[np.ndarray], None] | None):
        if data.ndim > 2:
            raise ShapeError(f"only scalars, vectors and matrices are supported, got ndim={data.ndim}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("forward op produced a non-finite value")
        self.tape = tape
        self.data = data
        self.grad = np.zeros_like(data)
        self._backward = backward
        tape._nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"DiffValue(shape={self.shape})"

    def __add__(self, other: "DiffValue") -> "DiffValue":
        return add(self, other)

    def __mul__(self, other: "DiffValue") -> "DiffValue":
        return hadamard(self, other)

    def __matmul__(self, other: "DiffValue") -> "DiffValue":
        return matmul(self, other)


class Tape:
    """Append-only op record; node order is a valid topological order."""

    def __init__(self) -> None:
        self._nodes: list[DiffValue] = []
        self._ran_backward = False

    def leaf(self, data) -> DiffValue:
        """Register an input or parameter value (copied to float64)."""
        arr = np.array(data, dtype=np.float64)
        return DiffValue(self, arr, None)

    def backward(self, loss: DiffValue, seed: float = 1.0) -> None:
        """Populate ``grad`` on every node reachable from ``loss``.

        ``seed`` is the adjoint of the root, useful for weighting a loss
        without building extra nodes. One backward sweep per tape.
        """
        if loss.tape is not self:
            raise TapeError("loss belongs to a different tape")
        if self._ran_backward:
            raise TapeError("backward already ran on this tape; rebuild the graph to differentiate again")
        if loss.shape != ():
            raise ShapeError(f"backward root must be a scalar, got shape {loss.shape}")
        self._ran_backward = True
        loss.grad += seed
        for node in reversed(self._nodes):
            if node._backward is not None:
                node._backward(node.grad)


def _join(*values: DiffValue) -> Tape:
    tape = values[0].tape
    for v in values[1:]:
        if v.tape is not tape:
            raise TapeError("cannot combine values from different tapes")
    return tape


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    tape = _join(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g: np.ndarray) -> None:
        a.grad += g
        b.grad += g

    return DiffValue(tape, a.data + b.data, backward)


def hadamard(a: DiffValue, b: DiffValue) -> DiffValue:
    """Elementwise product of two same-shape values."""
    tape = _join(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")

    def backward(g: np.ndarray) -> None:
        a.grad += g * b.data
        b.grad += g * a.data

    return DiffValue(tape, a.data * b.data, backward)


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    """Matrix @ vector -> vector, or matrix @ matrix -> matrix."""
    tape = _join(a, b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: need matrix @ (vector|matrix), got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    if b.data.ndim == 1:
        def backward(g: np.ndarray) -> None:
            a.grad += np.outer(g, b.data)
            b.grad += a.data.T @ g
    else:
        def backward(g: np.ndarray) -> None:
            a.grad += g @ b.data.T
            b.grad += a.data.T @ g

    return DiffValue(tape, a.data @ b.data, backward)


def concat(*parts: DiffValue) -> DiffValue:
    """Join scalars/vectors into one vector, order preserved."""
    if not parts:
        raise ShapeError("concat: need at least one part")
    tape = _join(*parts)
    for p in parts:
        if p.data.ndim > 1:
            raise ShapeError(f"concat: parts must be scalars or vectors, got shape {p.shape}")
    pieces = [np.atleast_1d(p.data) for p in parts]
    sizes = [piece.shape[0] for piece in pieces]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            seg = g[lo:hi]
            p.grad += seg[0] if p.data.ndim == 0 else seg

    return DiffValue(tape, np.concatenate(pieces), backward)


def scale(v: DiffValue, s: "DiffValue | float") -> DiffValue:
    """Multiply a value by a scalar (a () DiffValue or a plain constant)."""
    if isinstance(s, DiffValue):
        tape = _join(v, s)
        if s.shape != ():
            raise ShapeError(f"scale: scalar factor must have shape (), got {s.shape}")

        def backward(g: np.ndarray) -> None:
            v.grad += g * s.data
            s.grad += np.sum(g * v.data)

        return DiffValue(tape, v.data * s.data, backward)

    factor = float(s)

    def backward_const(g: np.ndarray) -> None:
        v.grad += g * factor

    return DiffValue(v.tape, v.data * factor, backward_const)


def sigmoid(x: DiffValue) -> DiffValue:
    # branch on sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        x.grad += g * out * (1.0 - out)

    return DiffValue(x.tape, out, backward)


def tanh(x: DiffValue) -> DiffValue:
    out = np.tanh(x.data)

    def backward(g: np.ndarray) -> None:
        x.grad += g * (1.0 - out * out)

    return DiffValue(x.tape, out, backward)


def scalar_mean(x: DiffValue) -> DiffValue:
    """Mean over all entries, as a scalar."""
    n = x.data.size
    if n == 0:
        raise ShapeError("scalar_mean: empty input")

    def backward(g: np.ndarray) -> None:
        x.grad += g / n

    return DiffValue(x.tape, np.asarray(np.mean(x.data)), backward)


def row_select(x: DiffValue, i: int) -> DiffValue:
    """Row ``i`` of a matrix, or element ``i`` of a vector (as a scalar)."""
    if x.data.ndim == 0:
        raise ShapeError("row_select: input must be a vector or matrix")
    if not 0 <= i < x.shape[0]:
        raise ShapeError(f"row_select: index {i} out of range for shape {x.shape}")

    def backward(g: np.ndarray) -> None:
        x.grad[i] += g

    return DiffValue(x.tape, np.asarray(x.data[i]).copy(), backward)


def softmax_masked(scores: DiffValue, active: Iterable[int]) -> DiffValue:
    """Softmax over the ``active`` indices of a score vector.

    Returns a vector over the active indices, in the given order; the
    weights are positive and sum to 1. Max-subtraction keeps exp stable.
    Callers must handle the empty-neighbourhood case themselves.
    """
    idx = list(active)
    if scores.data.ndim != 1:
        raise ShapeError(f"softmax_masked: scores must be a vector, got shape {scores.shape}")
    if not idx:
        raise ValueError("softmax_masked: active index set is empty")
    if len(set(idx)) != len(idx):
        raise ValueError("softmax_masked: duplicate active indices")
    for i in idx:
        if not 0 <= i < scores.shape[0]:
            raise ShapeError(f"softmax_masked: index {i} out of range for shape {scores.shape}")

    sub = scores.data[idx]
    e = np.exp(sub - np.max(sub))
    y = e / np.sum(e)

    def backward(g: np.ndarray) -> None:
        scores.grad[idx] += y * (g - np.dot(g, y))

    return DiffValue(scores.tape, y, backward)


def nll_logits(logits: DiffValue, label: int) -> DiffValue:
    """Negative log-softmax of the true class, via stable log-sum-exp."""
    if logits.data.ndim != 1:
        raise ShapeError(f"nll_logits: logits must be a vector, got shape {logits.shape}")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"nll_logits: label {label} out of range for {logits.shape[0]} classes")

    m = np.max(logits.data)
    shifted = logits.data - m
    lse = m + np.log(np.sum(np.exp(shifted)))

    def backward(g: np.ndarray) -> None:
        p = np.exp(shifted - (lse - m))
        p[label] -= 1.0
        logits.grad += g * p

    return DiffValue(logits.tape, np.asarray(lse - logits.data[label]), backward)


def grad_check(build_loss: Callable[[Mapping[str, DiffValue]], DiffValue],
               params: Mapping[str, np.ndarray],
               eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``build_loss`` maps a dict of leaf DiffValues (same keys as ``params``)
    to a scalar loss on those leaves' tape, and must be deterministic.
    The error per coordinate is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")

    def run(values: Mapping[str, np.ndarray]):
        tape = Tape()
        leaves = {name: tape.leaf(v) for name, v in values.items()}
        return tape, leaves, build_loss(leaves)

    tape, leaves, loss = run(params)
    tape.backward(loss)
    analytic = {name: leaves[name].grad.copy() for name in params}

    work = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    worst = 0.0
    for name, arr in work.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            f_plus = float(run(work)[2].data)
            arr[idx] = orig - eps
            f_minus = float(run(work)[2].data)
            arr[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
