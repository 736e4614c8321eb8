"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: dict = field(default_factory=dict)
    checked: int = 0

    def passed(self, tol):
        return np.isfinite(self.max_rel_error) and self.max_rel_error <= tol


def grad_check(fn, inputs, step=1e-5, floor=1e-6, max_coords=10_000, seed=0):
    """Compare analytic gradients of scalar ``fn()`` against central differences.

    ``inputs`` maps names to the Tensors ``fn`` reads. Each coordinate error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. Inputs with
    more than ``max_coords`` coordinates are checked on a seeded random subset.
    """
    for t in inputs.values():
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs double-precision inputs")
        t.requires_grad = True
        t.zero_grad()
    loss = fn()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in inputs.items()}

    rng = np.random.default_rng(seed)
    result = GradCheckResult(max_rel_error=0.0)
    for name, t in inputs.items():
        a = analytic[name]
        if not np.all(np.isfinite(a)):
            result.per_input[name] = float("inf")
            result.max_rel_error = float("inf")
            continue
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            ai = a.reshape(-1)[i]
            err = abs(ai - num) / max(abs(ai), abs(num), floor)
            worst = max(worst, err)
        result.per_input[name] = worst
        result.max_rel_error = max(result.max_rel_error, worst)
        result.checked += idx.size
    for t in inputs.values():
        t.zero_grad()
    return result
