"""Adam with bias correction, as a pure function over parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericalError, ValidationError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One update. Returns new parameter and state objects; inputs are not mutated."""
    for name, g in grads.items():
        if name not in params:
            raise ValidationError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if g is None:
            new_params[name], new_m[name], new_v[name] = p, m, v
            continue
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)
