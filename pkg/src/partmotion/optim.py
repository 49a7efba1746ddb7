"""Plain SGD and Adam over dicts of named arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


def _check(grads: dict[str, np.ndarray]) -> None:
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradient(f"step rejected: non-finite gradient in {', '.join(sorted(bad))}")


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    _check(grads)
    return {k: v - lr * grads[k] if k in grads else v for k, v in params.items()}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float | None = None) -> dict[str, np.ndarray]:
    """One Adam update; mutates ``state`` moments and returns new params."""
    _check(grads)
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for k, v in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = v
            continue
        m = state.m.get(k, np.zeros_like(v))
        s = state.v.get(k, np.zeros_like(v))
        m = b1 * m + (1 - b1) * g
        s = b2 * s + (1 - b2) * g * g
        state.m[k], state.v[k] = m, s
        out[k] = v - lr * (m / c1) / (np.sqrt(s / c2) + state.eps)
    return out
