"""Dense float64 tensor values and the small operation set the library builds on.

A "tensor" here is simply a C-contiguous ``numpy.ndarray`` of dtype float64:
row-major flat storage, no views or strides exposed. numpy supplies the
arithmetic; this module owns the contracts around it — every operation
validates shapes, and every produced value is checked to be finite so NaN/Inf
surface as :class:`~setnet.errors.NumericError` instead of propagating.

Reference oracles for these operations (triple-loop matmul and friends) live
in the test suite, deliberately independent of this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DimensionError, EmptyReductionError, NumericError

Tensor = np.ndarray

NONLINEARITIES = ("tanh", "elu", "sigmoid", "identity")


def as_tensor(values, where: str = "as_tensor") -> Tensor:
    """Coerce to a float64 array and reject non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    return ensure_finite(arr, where)


def ensure_finite(arr: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr)))
        raise NumericError(f"{where}: {bad} non-finite entries in result")
    return arr


@dataclass(frozen=True)
class Permutation:
    """A bijection on {0, ..., n-1}, stored as an index array.

    The convention, fixed once for the whole library: applying ``p`` to a
    tensor along an axis produces ``out[i] = x[p.mapping[i]]``.
    """

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.intp)
        if m.ndim != 1 or m.size == 0:
            raise DimensionError("permutation mapping must be a non-empty 1-D index array")
        if not np.array_equal(np.sort(m), np.arange(m.size)):
            raise DimensionError("permutation mapping is not a bijection on {0..n-1}")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    @property
    def n(self) -> int:
        return int(self.mapping.size)

    @staticmethod
    def identity(n: int) -> "Permutation":
        return Permutation(np.arange(n))

    @staticmethod
    def random(n: int, rng: np.random.Generator) -> "Permutation":
        return Permutation(rng.permutation(n))

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.mapping))

    def compose(self, other: "Permutation") -> "Permutation":
        """Permutation equivalent to applying ``other`` first, then ``self``:
        ``apply(apply(x, p), q) == apply(x, q.compose(p))``.
        """
        if self.n != other.n:
            raise DimensionError(f"cannot compose permutations of sizes {self.n} and {other.n}")
        return Permutation(other.mapping[self.mapping])

    def matrix(self) -> Tensor:
        """The n-by-n 0/1 matrix M with M @ x == apply_permutation(x, p, 0)."""
        m = np.zeros((self.n, self.n))
        m[np.arange(self.n), self.mapping] = 1.0
        return m


class ReduceResult(NamedTuple):
    values: Tensor
    argmax: Optional[np.ndarray]  # set only for kind="max"; ties broken by lowest index


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard rank-2 matrix product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul")


def reduce_over_axis(x: Tensor, axis: int, kind: str) -> ReduceResult:
    """Reduce one axis by sum, max or mean; the reduced axis is dropped.

    For ``kind="max"`` the argmax indices along the axis are returned as well
    (lowest index on ties) so gradients can be routed to a single entry.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank-{x.ndim} tensor")
    if x.shape[axis] == 0:
        raise EmptyReductionError(f"cannot reduce zero-length axis {axis}")
    if kind == "sum":
        out = np.sum(x, axis=axis)
        idx = None
    elif kind == "mean":
        out = np.mean(x, axis=axis)
        idx = None
    elif kind == "max":
        idx = np.argmax(x, axis=axis)
        out = np.max(x, axis=axis)
    else:
        raise DimensionError(f"unknown reduction kind {kind!r}")
    return ReduceResult(ensure_finite(out, f"reduce_over_axis[{kind}]"), idx)


def apply_permutation(x: Tensor, p: Permutation, axis: int) -> Tensor:
    """Reorder ``x`` along ``axis``: out[i] = x[p.mapping[i]]."""
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank-{x.ndim} tensor")
    if x.shape[axis] != p.n:
        raise DimensionError(f"axis {axis} has length {x.shape[axis]}, permutation has n={p.n}")
    return np.take(x, p.mapping, axis=axis)


def elementwise(x: Tensor, fn: str) -> Tensor:
    """Apply a pointwise nonlinearity: tanh, elu (alpha=1), sigmoid or identity."""
    x = np.asarray(x, dtype=np.float64)
    if fn == "tanh":
        out = np.tanh(x)
    elif fn == "elu":
        out = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    elif fn == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
    elif fn == "identity":
        out = x.copy()
    else:
        raise DimensionError(f"unknown nonlinearity {fn!r}")
    return ensure_finite(out, f"elementwise[{fn}]")


def elementwise_grad(x: Tensor, fn: str) -> Tensor:
    """d(elementwise(x, fn))/dx, evaluated entrywise at x."""
    x = np.asarray(x, dtype=np.float64)
    if fn == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if fn == "elu":
        return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    if fn == "sigmoid":
        s = elementwise(x, "sigmoid")
        return s * (1.0 - s)
    if fn == "identity":
        return np.ones_like(x)
    raise DimensionError(f"unknown nonlinearity {fn!r}")


def _broadcast_op(a: Tensor, b: Tensor, op, name: str) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    try:
        with np.errstate(over="ignore", invalid="ignore"):  # ensure_finite surfaces these
            out = op(a, b)
    except ValueError as exc:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return ensure_finite(out, name)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _broadcast_op(a, b, np.add, "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    return _broadcast_op(a, b, np.subtract, "subtract")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    return _broadcast_op(a, b, np.multiply, "multiply")


def concatenate(parts: Sequence[Tensor], axis: int) -> Tensor:
    arrs = [np.asarray(p, dtype=np.float64) for p in parts]
    if not arrs:
        raise DimensionError("concatenate needs at least one tensor")
    try:
        out = np.concatenate(arrs, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concatenate: incompatible shapes {[a.shape for a in arrs]}") from exc
    return ensure_finite(out, "concatenate")


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(shape)
    try:
        return x.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
