from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidState
from .params import ParamStore


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState) -> ParamStore:
    """Bias-corrected Adam update of every trainable entry; grads are cleared after."""
    params = store.trainable()
    missing = [k for k, t in params if t.grad is None]
    if missing:
        raise InvalidState(f"no gradient for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, t in params:
        g = t.grad
        if k not in state.m:
            state.m[k] = np.zeros_like(t.value)
            state.v[k] = np.zeros_like(t.value)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        t.grad = None
    return store


def clip_grad_norm(tensors, max_norm: float) -> float:
    """Scale grads in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [t.grad for t in tensors if t.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
