"""Permutation-equivariant layers, set pooling, set dropout and dense layers.

The equivariant layers come in four variants built around one template:

    y = sigma(x A  +  s * (1 agg(x)) G  [+ beta])

where ``agg`` is a masked sum or max over the set axis, ``s`` is +1 for the
sum family and -1 for the max-normalising family, and the scalar variants tie
A, G to single numbers with one channel. Because the aggregate ignores member
order, every variant is permutation-equivariant; pooling the output over the
set axis then gives a permutation-invariant set representation.

Batches are dense [B, N_max, K] arrays with an explicit per-set cardinality;
padding rows are masked out of every aggregate (zero weight in sums and mean
denominators, a large negative surrogate for max) so enlarging N_max never
changes a real row's output.

Layers hold their parameters as named ``Param`` objects and build autodiff
graph nodes through ``apply``; the module-level functions (equivariant
forward, set_pool, ...) are the pure value-level surface over the same math.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .errors import (
    DegenerateSetError,
    DimensionError,
    EmptyReductionError,
    FormatError,
)

EQ_VARIANTS = ("scalar_sum", "scalar_max", "channel_full", "channel_factored")
POOL_KINDS = ("sum", "max", "mean")

# additive surrogate that loses every masked max against any real float we use
_NEG_SURROGATE = -1e30


@dataclass(frozen=True)
class SetBatch:
    """A batch of sets: values [B, N_max, K] plus per-set cardinalities.

    Rows at index >= cardinality are padding; they are stored as zeros and
    must never influence a real row's output.
    """

    values: np.ndarray
    cardinalities: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise DimensionError(f"SetBatch values must be [B, N, K], got shape {vals.shape}")
        cards = np.asarray(self.cardinalities, dtype=np.intp)
        if cards.shape != (vals.shape[0],):
            raise DimensionError("need one cardinality per set")
        if np.any(cards < 1):
            raise EmptyReductionError("sets must have at least one member")
        if np.any(cards > vals.shape[1]):
            raise DimensionError("cardinality exceeds N_max")
        vals = vals * padding_mask(cards, vals.shape[1])  # canonical zero padding
        T.ensure_finite(vals, "SetBatch")
        vals.setflags(write=False)
        cards.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "cardinalities", cards)

    @property
    def num_sets(self) -> int:
        return self.values.shape[0]

    @property
    def max_size(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def with_values(self, values: np.ndarray) -> "SetBatch":
        return SetBatch(values, self.cardinalities)

    def permute_members(self, perms: Sequence[T.Permutation]) -> "SetBatch":
        """Reorder the real rows of each set; padding stays in place."""
        if len(perms) != self.num_sets:
            raise DimensionError("need one permutation per set")
        out = np.array(self.values)
        for b, p in enumerate(perms):
            n = int(self.cardinalities[b])
            if p.n != n:
                raise DimensionError(f"set {b} has {n} members, permutation has n={p.n}")
            out[b, :n] = self.values[b, p.mapping]
        return SetBatch(out, self.cardinalities)


def padding_mask(cards: np.ndarray, n_max: int) -> np.ndarray:
    """1.0 on real rows, 0.0 on padding; shape [B, N_max, 1]."""
    cards = np.asarray(cards)
    return (np.arange(n_max)[None, :, None] < cards[:, None, None]).astype(np.float64)


class Param:
    """A named, mutable parameter array (optimizers write new values back)."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.value.size


def fan_uniform(rng: np.random.Generator, k_in: int, k_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (k_in + k_out))
    return rng.uniform(-bound, bound, size=(k_in, k_out))


def bind(tape: ad.Tape, params: Sequence[Param]) -> Dict[str, ad.Node]:
    """Register every parameter as a differentiable tape variable."""
    return {p.name: tape.variable(p.value, p.name) for p in params}


def _masked_aggregate(tape: ad.Tape, x: ad.Node, cards: np.ndarray, kind: str) -> ad.Node:
    """Masked reduction over the set axis; [B, N, K] -> [B, 1, K]."""
    n_max = x.value.shape[1]
    mask = tape.constant(padding_mask(cards, n_max))
    if kind == "sum":
        return (x * mask).sum(axis=1, keepdims=True)
    if kind == "mean":
        inv_n = tape.constant(1.0 / cards.astype(np.float64)[:, None, None])
        return (x * mask).sum(axis=1, keepdims=True) * inv_n
    if kind == "max":
        # 0 on real rows, the large negative surrogate on padding
        offset = tape.constant((1.0 - padding_mask(cards, n_max)) * _NEG_SURROGATE)
        return (x * mask + offset).max(axis=1, keepdims=True)
    raise DimensionError(f"unknown aggregate {kind!r}")


def _per_member_matmul(x: ad.Node, w: ad.Node) -> ad.Node:
    """[B, N, K] @ [K, K'] applied to every member row."""
    b, n, k = x.value.shape
    return (x.reshape((b * n, k)) @ w).reshape((b, n, w.value.shape[1]))


class EquivariantLayer:
    """One permutation-equivariant layer over [B, N, K] set batches.

    variant:
      scalar_sum       1 channel, y = sigma(lam*x + gam*agg(x)); agg defaults to sum
      scalar_max       1 channel, y = sigma(lam*x - gam*max(x))
      channel_full     y = sigma(x Lam - 1 max(x) Gam), or + 1 sum(x) Gam with aggregate="sum"
      channel_factored y = sigma(beta + (x - 1 max(x)) Gam), one weight matrix plus bias
    """

    def __init__(
        self,
        k_in: int,
        k_out: int,
        variant: str = "channel_factored",
        activation: str = "tanh",
        aggregate: Optional[str] = None,
        rng: Optional[np.random.Generator] = None,
        name: str = "eq",
    ):
        if variant not in EQ_VARIANTS:
            raise DimensionError(f"unknown variant {variant!r}")
        if activation not in T.NONLINEARITIES:
            raise DimensionError(f"unknown activation {activation!r}")
        if variant.startswith("scalar") and (k_in != 1 or k_out != 1):
            raise DimensionError("scalar variants require one input and one output channel")
        self.variant = variant
        self.k_in = k_in
        self.k_out = k_out
        self.activation = activation
        self.name = name
        if variant == "scalar_sum":
            self.aggregate = aggregate or "sum"
            self.sign = 1.0
        elif variant == "scalar_max":
            self.aggregate = aggregate or "max"
            self.sign = -1.0
        elif variant == "channel_full":
            self.aggregate = aggregate or "max"
            self.sign = -1.0 if self.aggregate == "max" else 1.0
        else:  # channel_factored: max-normalisation is the point of the variant
            self.aggregate = "max"
            self.sign = -1.0
        if self.aggregate not in ("sum", "max"):
            raise DimensionError(f"unknown aggregate {self.aggregate!r}")

        rng = rng or np.random.default_rng(0)
        if variant == "channel_factored":
            self.gam = Param(f"{name}.Gamma", fan_uniform(rng, k_in, k_out))
            self.beta = Param(f"{name}.beta", np.zeros(k_out))
            self.lam = None
        else:
            self.lam = Param(f"{name}.Lambda", fan_uniform(rng, k_in, k_out))
            self.gam = Param(f"{name}.Gamma", fan_uniform(rng, k_in, k_out))
            self.beta = None

    def params(self) -> List[Param]:
        return [p for p in (self.lam, self.gam, self.beta) if p is not None]

    def apply(self, tape: ad.Tape, x: ad.Node, cards: np.ndarray, bound: Dict[str, ad.Node]) -> ad.Node:
        if x.value.shape[2] != self.k_in:
            raise DimensionError(
                f"{self.name}: expected {self.k_in} input channels, got {x.value.shape[2]}"
            )
        agg = _masked_aggregate(tape, x, cards, self.aggregate)  # [B, 1, K]
        gam = bound[self.gam.name]
        if self.variant == "channel_factored":
            pre = _per_member_matmul(x + (-1.0) * agg, gam) + bound[self.beta.name]
        else:
            lam = bound[self.lam.name]
            pre = _per_member_matmul(x, lam) + self.sign * _per_member_matmul(agg, gam)
        return ad.nonlinearity(pre, self.activation)

    def forward(self, batch: SetBatch) -> SetBatch:
        """Pure value-level forward (parameters treated as constants)."""
        tape = ad.Tape()
        x = tape.constant(batch.values)
        bound = {p.name: tape.constant(p.value) for p in self.params()}
        y = self.apply(tape, x, batch.cardinalities, bound)
        return batch.with_values(y.value)


class Dense:
    """Affine map plus nonlinearity on the last axis (shared across members)."""

    def __init__(self, k_in, k_out, activation="identity", rng=None, name="dense"):
        if activation not in T.NONLINEARITIES:
            raise DimensionError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.k_in = k_in
        self.k_out = k_out
        self.activation = activation
        self.name = name
        self.w = Param(f"{name}.W", fan_uniform(rng, k_in, k_out))
        self.b = Param(f"{name}.b", np.zeros(k_out))

    def params(self) -> List[Param]:
        return [self.w, self.b]

    def apply(self, tape: ad.Tape, x: ad.Node, bound: Dict[str, ad.Node]) -> ad.Node:
        if x.value.shape[-1] != self.k_in:
            raise DimensionError(f"{self.name}: expected {self.k_in} inputs, got {x.value.shape[-1]}")
        w, b = bound[self.w.name], bound[self.b.name]
        if x.value.ndim == 2:
            pre = x @ w + b
        else:
            lead = x.value.shape[:-1]
            flat = x.reshape((int(np.prod(lead)), self.k_in))
            pre = (flat @ w + b).reshape(lead + (self.k_out,))
        return ad.nonlinearity(pre, self.activation)


class SetPool:
    """Commutative reduction over the set axis: [B, N, K] -> [B, K]."""

    def __init__(self, kind: str = "sum"):
        if kind not in POOL_KINDS:
            raise DimensionError(f"unknown pool kind {kind!r}")
        self.kind = kind

    def apply(self, tape: ad.Tape, x: ad.Node, cards: np.ndarray) -> ad.Node:
        b, _, k = x.value.shape
        return _masked_aggregate(tape, x, cards, self.kind).reshape((b, k))


class Dropout:
    """Inverted dropout over channels; optionally one shared mask per set.

    With ``simultaneous`` the same channels are dropped for every member of a
    set, so members cannot fill in each other's missing features. At
    evaluation time the layer is the identity. The mask used by the last
    training application is kept on ``last_mask`` for inspection.
    """

    def __init__(self, rate: float, simultaneous: bool = True):
        if not 0.0 <= rate < 1.0:
            raise DimensionError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.simultaneous = simultaneous
        self.last_mask: Optional[np.ndarray] = None

    def sample_mask(self, rng: np.random.Generator, shape) -> np.ndarray:
        if len(shape) == 3 and self.simultaneous:
            b, _, k = shape
            draw_shape = (b, 1, k)  # one mask per (set, channel), shared across members
        else:
            draw_shape = tuple(shape)
        keep = (rng.random(draw_shape) >= self.rate).astype(np.float64)
        return keep / (1.0 - self.rate)

    def apply(self, tape: ad.Tape, x: ad.Node, rng: Optional[np.random.Generator], training: bool) -> ad.Node:
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise DimensionError("training-time dropout needs an rng")
        mask = self.sample_mask(rng, x.value.shape)
        self.last_mask = mask
        return x * tape.constant(mask)


class NormalizeSets:
    """Center each set per axis and scale to unit global variance.

    Means and the (single, global) standard deviation are computed over the
    real rows only; every axis is divided by the same deviation. Sets need at
    least two members.
    """

    eps = 1e-8

    def apply(self, tape: ad.Tape, x: ad.Node, cards: np.ndarray) -> ad.Node:
        if np.any(cards < 2):
            raise DegenerateSetError("normalization needs sets of at least two members")
        _, n_max, k = x.value.shape
        mask = tape.constant(padding_mask(cards, n_max))
        inv_n = tape.constant(1.0 / cards.astype(np.float64)[:, None, None])
        mean = (x * mask).sum(axis=1, keepdims=True) * inv_n  # [B, 1, K]
        centered = x - mean
        sq = centered * centered * mask
        var = sq.sum(axis=1, keepdims=True).sum(axis=2, keepdims=True) * inv_n * (1.0 / k)
        inv_std = (var + self.eps).pow_const(-0.5)
        return centered * inv_std


# --- pure value-level surface ------------------------------------------------


@dataclass(frozen=True)
class PoolSpec:
    kind: str = "sum"

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise DimensionError(f"unknown pool kind {self.kind!r}")


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0
    simultaneous: bool = True

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise DimensionError("dropout rate must be in [0, 1)")


def equivariant_forward(layer: EquivariantLayer, batch: SetBatch) -> SetBatch:
    return layer.forward(batch)


def set_pool(batch: SetBatch, spec: PoolSpec) -> np.ndarray:
    """Permutation-invariant per-set reduction over real rows; [B, K]."""
    tape = ad.Tape()
    x = tape.constant(batch.values)
    return SetPool(spec.kind).apply(tape, x, batch.cardinalities).value


def dropout_forward(
    batch: SetBatch, spec: DropoutSpec, rng: Optional[np.random.Generator], training: bool
) -> SetBatch:
    layer = Dropout(spec.rate, spec.simultaneous)
    tape = ad.Tape()
    x = tape.constant(batch.values)
    return batch.with_values(layer.apply(tape, x, rng, training).value)


def dense_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray, activation: str = "identity") -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"dense input has {x.shape[-1]} features, weight expects {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise DimensionError("bias length must match output width")
    return T.elementwise(x @ w + b, activation)


def normalize_sets(batch: SetBatch) -> SetBatch:
    tape = ad.Tape()
    x = tape.constant(batch.values)
    return batch.with_values(NormalizeSets().apply(tape, x, batch.cardinalities).value)


# --- parameter checkpoints ----------------------------------------------------

_CHECKPOINT_HEADER = "setnet-params 1"


def save_params(path, params: Sequence[Param], meta: Optional[Dict[str, str]] = None) -> None:
    """Write a versioned textual checkpoint; float64 values round-trip exactly."""
    buf = io.StringIO()
    buf.write(_CHECKPOINT_HEADER + "\n")
    for key, val in sorted((meta or {}).items()):
        if any(ch.isspace() for ch in key) or any(ch.isspace() for ch in str(val)):
            raise FormatError("checkpoint meta keys/values must not contain whitespace")
        buf.write(f"meta {key} {val}\n")
    for p in params:
        dims = " ".join(str(d) for d in p.value.shape)
        buf.write(f"param {p.name} {p.value.ndim}{(' ' + dims) if dims else ''}\n")
        buf.write(" ".join(repr(float(v)) for v in p.value.ravel()) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_params(path):
    """Read a checkpoint; returns (name -> array, meta dict)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CHECKPOINT_HEADER:
        raise FormatError(f"{path}: not a setnet checkpoint (bad header)")
    meta: Dict[str, str] = {}
    arrays: Dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        fields = line.split()
        if fields[0] == "meta":
            if len(fields) != 3:
                raise FormatError(f"{path}:{i + 1}: malformed meta line")
            meta[fields[1]] = fields[2]
            i += 1
        elif fields[0] == "param":
            if len(fields) < 3:
                raise FormatError(f"{path}:{i + 1}: malformed param line")
            name = fields[1]
            rank = int(fields[2])
            dims = tuple(int(d) for d in fields[3 : 3 + rank])
            if len(dims) != rank or i + 1 >= len(lines):
                raise FormatError(f"{path}:{i + 1}: truncated param entry")
            try:
                data = np.array([float(tok) for tok in lines[i + 1].split()], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}:{i + 2}: non-numeric value in {name}") from exc
            expect = int(np.prod(dims, dtype=np.int64)) if dims else 1
            if data.size != expect:
                raise FormatError(f"{path}:{i + 2}: expected {expect} values for {name}, got {data.size}")
            arrays[name] = data.reshape(dims)
            i += 2
        else:
            raise FormatError(f"{path}:{i + 1}: unknown record {fields[0]!r}")
    return arrays, meta


def restore_params(params: Sequence[Param], arrays: Dict[str, np.ndarray]) -> None:
    """Load checkpoint arrays into matching Param objects (strict on names/shapes)."""
    for p in params:
        if p.name not in arrays:
            raise FormatError(f"checkpoint is missing parameter {p.name!r}")
        arr = arrays[p.name]
        if arr.shape != p.value.shape:
            raise FormatError(f"{p.name}: checkpoint shape {arr.shape} != model shape {p.value.shape}")
        p.value = arr.copy()


def count_params(params: Sequence[Param]) -> int:
    return int(sum(p.size for p in params))
