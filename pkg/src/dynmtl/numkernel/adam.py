from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import ShapeError, Tensor


@dataclass
class AdamState:
    params: dict[str, Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))


def adam_step(state: AdamState, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
    """Apply one bias-corrected Adam update in place.

    ``lr`` overrides ``state.lr`` for this step (used by step schedules).
    """
    for name, g in grads.items():
        if name not in state.params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        if g.shape != state.params[name].shape:
            raise ShapeError(f"'{name}': grad {g.shape} vs param {state.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for '{name}'")
    state.step += 1
    t = state.step
    rate = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        p = state.params[name]
        p.data = p.data - rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
