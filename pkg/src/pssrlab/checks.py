"""Finite-difference gradient checks over every op and both full graphs."""
from __future__ import annotations

import numpy as np

from . import pssr
from . import srqa_net as qn
from . import tensorgrad as tg
from .tensorgrad import Tensor

TOLERANCE = 1e-4


def _away_from_zero(rng, shape, margin=0.05):
    # keeps leaky-ReLU kinks out of the finite-difference stencil
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


class _Reduce:
    """Scalar loss with a non-trivial upstream gradient; one fixed target per output shape."""

    def __init__(self, rng):
        self.rng = rng
        self.targets = {}

    def __call__(self, out, key):
        if key not in self.targets:
            self.targets[key] = self.rng.standard_normal(out.shape)
        return tg.mse(out, self.targets[key])


def _op_cases(rng):
    red = _Reduce(rng)
    t = lambda *shape: Tensor(rng.standard_normal(shape))
    x, w, b = t(2, 3, 7, 6), t(4, 3, 3, 3), t(4)
    yield "conv2d", lambda: red(tg.conv2d(x, w, b, stride=1, pad=1), "conv2d"), {"x": x, "w": w, "b": b}
    xs, ws, bs = t(1, 2, 9, 9), t(3, 2, 3, 3), t(3)
    yield "conv2d_stride2", lambda: red(tg.conv2d(xs, ws, bs, stride=2, pad=1), "conv2d_stride2"), {"x": xs, "w": ws, "b": bs}
    xd, wd, bd = t(3, 5), t(5, 4), t(4)
    yield "dense", lambda: red(tg.dense(xd, wd, bd), "dense"), {"x": xd, "w": wd, "b": bd}
    xl = Tensor(_away_from_zero(rng, (2, 3, 4, 4)))
    yield "leaky_relu", lambda: red(tg.leaky_relu(xl, 0.1), "leaky_relu"), {"x": xl}
    a, c = t(2, 3, 4, 4), t(2, 3, 4, 4)
    yield "add", lambda: red(tg.add(a, c), "add"), {"a": a, "b": c}
    yield "subtract", lambda: red(tg.subtract(a, c), "subtract"), {"a": a, "b": c}
    d = t(2, 2, 4, 4)
    yield "concat_channels", lambda: red(tg.concat_channels([a, d]), "concat_channels"), {"a": a, "b": d}
    yield "slice_channels", lambda: red(tg.slice_channels(a, 1, 3), "slice_channels"), {"x": a}
    e = t(1, 2, 8, 8)
    yield "crop2d", lambda: red(tg.crop2d(e, 1, 2, 5, 4), "crop2d"), {"x": e}
    yield "global_avg_pool", lambda: red(tg.global_avg_pool(a), "global_avg_pool"), {"x": a}
    yield "avg_pool2x2", lambda: red(tg.avg_pool2x2(e), "avg_pool2x2"), {"x": e}
    yield "mse", lambda: tg.mse(a, c), {"a": a, "b": c}
    s1, s2 = t(), t()
    yield "scalar_combine", lambda: tg.scalar_combine([tg.mse(s1, 0.3), tg.mse(s2, -1.0)], [0.7, 2.5]), {"s1": s1, "s2": s2}


def _qa_case(rng):
    model = qn.init_qa(qn.TINY_QA, seed=int(rng.integers(1 << 31)))
    left = Tensor(rng.random((2, 3, 16, 16)))
    right = Tensor(rng.random((2, 3, 16, 16)))
    # targets near the current output keep |loss| small, so finite-difference
    # roundoff (about eps * |loss| / step) stays well under the tolerance
    y0 = qn.qa_forward(model, left, right)[0].data
    target = y0 + 0.5 * rng.standard_normal(y0.shape)
    inputs = dict(model.params, left=left, right=right)
    return lambda: tg.mse(qn.qa_forward(model, left, right)[0], target), inputs


def _iqp_case(rng):
    qa = qn.init_qa(qn.TINY_QA, seed=int(rng.integers(1 << 31))).frozen()
    model = pssr.init_sr(pssr.SRConfig(width=qn.TINY_QA.feature_width, scale=2), seed=int(rng.integers(1 << 31)))
    for p in model.params.values():
        p.data = p.data + 0.2 * rng.standard_normal(p.shape)
    lr_l, lr_r = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
    gt_l, gt_r = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))

    def fn():
        return pssr.combined_loss(qa, model, lr_l, lr_r, gt_l, gt_r, (1.0, 0.5, 0.5), 2).total_tensor

    return fn, model.params


def gradcheck_suite(seed=0):
    """``[(name, GradCheckResult)]`` for each op, the tiny QA network and the combined SR loss."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in _op_cases(rng):
        results.append((name, tg.grad_check(fn, inputs, seed=seed)))
    fn, inputs = _qa_case(rng)
    results.append(("qa_network", tg.grad_check(fn, inputs, seed=seed)))
    fn, inputs = _iqp_case(rng)
    results.append(("combined_iqp_loss", tg.grad_check(fn, inputs, seed=seed)))
    return results
