"""Tape-based reverse-mode automatic differentiation over the tensor ops.

Execution is define-by-run: building a node computes its value eagerly and
appends it to the tape, so node references only ever point backward and the
reverse sweep visits each node exactly once, in reverse creation order.
Gradients are exact for every differentiable composite; ``max`` is given the
single-argmax subgradient (lowest index on ties) and ``mean`` distributes
1/N, so training runs are deterministic.

``gradient_check`` re-executes the recorded graph with perturbed leaf values
(central differences) and compares against the reverse sweep. Probes that
cross a max-kink (the argmax pattern of any max node differs between the two
perturbed replays) are flagged as non-differentiable points and excluded
rather than reported as failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NumericError

GradientMap = Dict[str, np.ndarray]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Node:
    """One recorded value. Operators build new nodes on the same tape."""

    __slots__ = ("tape", "index", "value", "parents", "op", "fwd", "vjp", "name", "is_variable")

    def __init__(self, tape, index, value, parents, op, fwd, vjp, name, is_variable):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.op = op
        self.fwd = fwd  # recompute value from parent values; None for leaves
        self.vjp = vjp  # (grad_out, parent_values, out_value) -> per-parent grads
        self.name = name
        self.is_variable = is_variable

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def _coerce(self, other) -> "Node":
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise ContractError("cannot mix nodes from different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape._binary(
            "add", self, self._coerce(other), np.add,
            lambda g, pv, out: (_unbroadcast(g, pv[0].shape), _unbroadcast(g, pv[1].shape)),
        )

    def __radd__(self, other):
        return self._coerce(other).__add__(self)

    def __sub__(self, other):
        return self.tape._binary(
            "sub", self, self._coerce(other), np.subtract,
            lambda g, pv, out: (_unbroadcast(g, pv[0].shape), _unbroadcast(-g, pv[1].shape)),
        )

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        return self.tape._binary(
            "mul", self, self._coerce(other), np.multiply,
            lambda g, pv, out: (_unbroadcast(g * pv[1], pv[0].shape), _unbroadcast(g * pv[0], pv[1].shape)),
        )

    def __rmul__(self, other):
        return self._coerce(other).__mul__(self)

    def __neg__(self):
        return self.tape._record(
            "neg", (self,),
            fwd=lambda a: -a,
            vjp=lambda g, pv, out: (-g,),
        )

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.value.ndim != 2 or other.value.ndim != 2:
            raise DimensionError("matmul nodes must be rank-2; reshape first")
        return self.tape._record(
            "matmul", (self, other),
            fwd=lambda a, b: T.matmul(a, b),
            vjp=lambda g, pv, out: (g @ pv[1].T, pv[0].T @ g),
        )

    def reshape(self, shape) -> "Node":
        shape = tuple(shape)
        return self.tape._record(
            "reshape", (self,),
            fwd=lambda a: T.reshape(a, shape),
            vjp=lambda g, pv, out: (g.reshape(pv[0].shape),),
        )

    def sum(self, axis: int, keepdims: bool = False) -> "Node":
        def fwd(a):
            return np.sum(a, axis=axis, keepdims=keepdims)

        def vjp(g, pv, out):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, pv[0].shape).copy(),)

        return self.tape._record("sum_axis", (self,), fwd=fwd, vjp=vjp)

    def mean(self, axis: int, keepdims: bool = False) -> "Node":
        def fwd(a):
            return np.mean(a, axis=axis, keepdims=keepdims)

        def vjp(g, pv, out):
            n = pv[0].shape[axis]
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, pv[0].shape).copy(),)

        return self.tape._record("mean_axis", (self,), fwd=fwd, vjp=vjp)

    def max(self, axis: int, keepdims: bool = False) -> "Node":
        def fwd(a):
            return np.max(a, axis=axis, keepdims=keepdims)

        def vjp(g, pv, out):
            a = pv[0]
            idx = np.expand_dims(np.argmax(a, axis=axis), axis)
            if not keepdims:
                g = np.expand_dims(g, axis)
            grad = np.zeros_like(a)
            np.put_along_axis(grad, idx, g, axis)
            return (grad,)

        node = self.tape._record("max_axis", (self,), fwd=fwd, vjp=vjp)
        node.tape._max_axes[node.index] = axis
        return node

    def sum_all(self) -> "Node":
        return self.tape._record(
            "sum_all", (self,),
            fwd=lambda a: np.sum(a),
            vjp=lambda g, pv, out: (np.full(pv[0].shape, float(g)),),
        )

    def pow_const(self, p: float) -> "Node":
        return self.tape._record(
            "pow_const", (self,),
            fwd=lambda a: np.power(a, p),
            vjp=lambda g, pv, out: (g * p * np.power(pv[0], p - 1.0),),
        )


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.variables: List[Node] = []
        self._var_names = set()
        self._max_axes: Dict[int, int] = {}  # node index -> reduced axis, for kink detection

    def _append(self, value, parents, op, fwd, vjp, name, is_variable) -> Node:
        node = Node(self, len(self.nodes), value, parents, op, fwd, vjp, name, is_variable)
        self.nodes.append(node)
        return node

    def variable(self, value, name: str) -> Node:
        if name in self._var_names:
            raise ContractError(f"duplicate variable name {name!r}")
        self._var_names.add(name)
        arr = T.as_tensor(value, f"variable {name!r}")
        node = self._append(arr, (), "variable", None, None, name, True)
        self.variables.append(node)
        return node

    def constant(self, value, name: Optional[str] = None) -> Node:
        arr = T.as_tensor(value, name or "constant")
        return self._append(arr, (), "constant", None, None, name, False)

    def _record(self, op, parents, fwd, vjp, name=None) -> Node:
        pv = tuple(p.value for p in parents)
        with np.errstate(over="ignore", invalid="ignore"):  # the finite check below surfaces these
            value = np.asarray(fwd(*pv), dtype=np.float64)
        T.ensure_finite(value, f"node#{len(self.nodes)}[{op}]")
        return self._append(value, parents, op, fwd, vjp, name, False)

    def _binary(self, op, a: Node, b: Node, ufunc, vjp) -> Node:
        def fwd(x, y):
            try:
                return ufunc(x, y)
            except ValueError as exc:
                raise DimensionError(f"{op}: shapes {x.shape} and {y.shape} do not broadcast") from exc

        return self._record(op, (a, b), fwd=fwd, vjp=vjp)


def nonlinearity(x: Node, fn: str) -> Node:
    if fn == "identity":
        return x
    return x.tape._record(
        f"nl_{fn}", (x,),
        fwd=lambda a: T.elementwise(a, fn),
        vjp=lambda g, pv, out: (g * T.elementwise_grad(pv[0], fn),),
    )


def concat(parts: Sequence[Node], axis: int) -> Node:
    if not parts:
        raise DimensionError("concat needs at least one node")
    tape = parts[0].tape
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g, pv, out):
        return tuple(np.split(g, offsets, axis=axis))

    return tape._record(
        "concat", tuple(parts),
        fwd=lambda *vals: T.concatenate(vals, axis),
        vjp=vjp,
    )


def softmax_cross_entropy(logits: Node, labels: np.ndarray) -> Node:
    """Mean cross-entropy of row-wise softmax against integer labels.

    Fused and shift-stabilised (log-sum-exp with the row max subtracted), so
    large logits cannot overflow.
    """
    labels = np.asarray(labels)
    if logits.value.ndim != 2:
        raise DimensionError("softmax_cross_entropy expects [batch, classes] logits")
    if labels.shape != (logits.value.shape[0],):
        raise DimensionError("labels must be one integer per logits row")
    if labels.min() < 0 or labels.max() >= logits.value.shape[1]:
        raise ContractError("labels out of class range")
    rows = np.arange(labels.shape[0])

    def fwd(z):
        shift = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.sum(np.exp(shift), axis=1))
        return np.mean(lse - shift[rows, labels])

    def vjp(g, pv, out):
        z = pv[0]
        shift = z - z.max(axis=1, keepdims=True)
        ez = np.exp(shift)
        p = ez / ez.sum(axis=1, keepdims=True)
        p[rows, labels] -= 1.0
        return (g * p / labels.shape[0],)

    return logits.tape._record("softmax_ce", (logits,), fwd=fwd, vjp=vjp)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Plain softmax on the last axis (evaluation-side helper)."""
    shift = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shift)
    return e / e.sum(axis=-1, keepdims=True)


def forward(tape: Tape, root: Node) -> np.ndarray:
    """Value at ``root``; intermediates were cached during construction."""
    if root.tape is not tape:
        raise ContractError("root does not belong to this tape")
    return root.value


def backward(tape: Tape, root: Node) -> GradientMap:
    """Reverse sweep from a scalar root; returns per-variable gradients."""
    if root.tape is not tape:
        raise ContractError("root does not belong to this tape")
    if root.value.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    grads: Dict[int, np.ndarray] = {root.index: np.asarray(1.0)}
    for node in reversed(tape.nodes[: root.index + 1]):
        if not node.parents or node.index not in grads:
            continue
        g = grads.pop(node.index)  # op node: fully accumulated by now
        pv = tuple(p.value for p in node.parents)
        parent_grads = node.vjp(g, pv, node.value)
        for p, pg in zip(node.parents, parent_grads):
            if p.index in grads:
                grads[p.index] = grads[p.index] + pg
            else:
                grads[p.index] = np.asarray(pg, dtype=np.float64)
    out: GradientMap = {}
    for var in tape.variables:
        g = grads.get(var.index)
        if g is None:
            g = np.zeros_like(var.value)
        g = np.broadcast_to(np.asarray(g, dtype=np.float64), var.value.shape).copy()
        T.ensure_finite(g, f"gradient of {var.name!r}")
        out[var.name] = g
    return out


def replay(tape: Tape, overrides: Optional[Dict[int, np.ndarray]] = None):
    """Recompute all node values, substituting leaf values from ``overrides``.

    Returns (values, max_signatures) where max_signatures maps each max
    node's index to its argmax pattern, used to detect kink crossings.
    """
    overrides = overrides or {}
    values: List[np.ndarray] = []
    signatures: Dict[int, np.ndarray] = {}
    for node in tape.nodes:
        if node.fwd is None:
            values.append(overrides.get(node.index, node.value))
        else:
            pv = tuple(values[p.index] for p in node.parents)
            values.append(np.asarray(node.fwd(*pv), dtype=np.float64))
            ax = tape._max_axes.get(node.index)
            if ax is not None:
                signatures[node.index] = np.argmax(pv[0], axis=ax)
    return values, signatures


@dataclass
class GradientCheckReport:
    tolerance: float
    step: float
    max_rel_error: float = 0.0
    entries_checked: int = 0
    entries_flagged: int = 0  # probes at non-differentiable (max-tie) points, excluded
    per_variable: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradient check {status}: max rel error {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.1e}), {self.entries_checked} entries checked, "
            f"{self.entries_flagged} flagged non-differentiable"
        )


def gradient_check(tape: Tape, root: Node, step: float = 1e-5, tolerance: float = 1e-4) -> GradientCheckReport:
    """Compare backward() against central finite differences, entry by entry."""
    if step <= 0:
        raise ContractError("step must be positive")
    if root.value.shape != ():
        raise ContractError("gradient_check root must be scalar")
    analytic = backward(tape, root)
    report = GradientCheckReport(tolerance=tolerance, step=step)
    for var in tape.variables:
        worst = 0.0
        base = var.value
        for j in range(base.size):
            plus = base.copy()
            minus = base.copy()
            plus.flat[j] += step
            minus.flat[j] -= step
            vals_p, sig_p = replay(tape, {var.index: plus})
            vals_m, sig_m = replay(tape, {var.index: minus})
            if any(not np.array_equal(sig_p[k], sig_m[k]) for k in sig_p):
                report.entries_flagged += 1
                continue
            fd = (float(vals_p[root.index]) - float(vals_m[root.index])) / (2.0 * step)
            ad = float(analytic[var.name].flat[j])
            scale = max(abs(ad), abs(fd))
            # below the scale floor the comparison degenerates to absolute
            err = abs(ad - fd) / scale if scale > 1e-6 else abs(ad - fd)
            worst = max(worst, err)
            report.entries_checked += 1
            if err > tolerance:
                report.failures.append(f"{var.name}[{j}]: analytic {ad:.6e} vs central-difference {fd:.6e} (rel {err:.3e})")
        report.per_variable[var.name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
