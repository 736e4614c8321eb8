"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """Apply one Adam update in place to every tensor in ``params`` (name -> Tensor).

    Parameters whose ``grad`` is ``None`` are left untouched. A NaN or infinite
    gradient aborts the whole step before anything is modified.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name in state.m and state.m[name].shape != p.data.shape:
            raise ValueError(f"Adam moment shape {state.m[name].shape} != parameter {name!r} shape {p.data.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
