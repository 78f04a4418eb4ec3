"""Stochastic optimizers: plain SGD, Adam, and Adamax.

One optimizer instance owns the state for one training run. ``step``
validates every gradient before touching any state, so a non-finite gradient
refuses the whole step instead of corrupting the moments.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .layers import Param

KINDS = ("sgd", "adam", "adamax")

_ADAMAX_FLOOR = 1e-12  # keeps the infinity-norm moment away from zero division


class Optimizer:
    def __init__(
        self,
        kind: str,
        params: Sequence[Param],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: Optional[float] = None,
    ):
        if kind not in KINDS:
            raise ConfigError(f"unknown optimizer {kind!r}")
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.kind = kind
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        if kind != "sgd":
            for p in self.params:
                self.m[p.name] = np.zeros_like(p.value)
                self.v[p.name] = np.zeros_like(p.value)

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        """Apply one update. Parameters are updated in place via Param.value."""
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                raise NumericError(f"missing gradient for {p.name!r}")
            if g.shape != p.value.shape:
                raise NumericError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {p.name!r}; step refused")
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(grads[p.name] ** 2)) for p in self.params))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        self.t += 1
        for p in self.params:
            g = grads[p.name] * scale
            if self.kind == "sgd":
                p.value = p.value - self.lr * g
            elif self.kind == "adam":
                m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
                v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * g * g
                m_hat = m / (1 - self.beta1**self.t)
                v_hat = v / (1 - self.beta2**self.t)
                p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            else:  # adamax
                m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
                u = self.v[p.name] = np.maximum(self.beta2 * self.v[p.name], np.abs(g))
                u = np.maximum(u, _ADAMAX_FLOOR)
                p.value = p.value - (self.lr / (1 - self.beta1**self.t)) * m / u

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moment tensors under stable names, for checkpointing."""
        out = {}
        for name, arr in self.m.items():
            out[f"opt.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"opt.v.{name}"] = arr
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for p in self.params:
            if self.kind != "sgd":
                self.m[p.name] = arrays[f"opt.m.{p.name}"].copy()
                self.v[p.name] = arrays[f"opt.v.{p.name}"].copy()
