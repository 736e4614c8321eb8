"""Dense double-precision tensor with a reverse-mode tape."""
from __future__ import annotations

import numpy as np


class Tensor:
    """Node in a reverse-mode computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is allocated lazily on the
    first backward pass that reaches the tensor and accumulates across
    backward calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _op=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = _op
        self._parents = _parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        op = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{op}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Propagate d(self)/d(node) to every reachable node with requires_grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node._accumulate(g)
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if not all(np.all(np.isfinite(n.grad)) for n in order if n.grad is not None):
            raise FloatingPointError("non-finite gradient encountered during backward()")


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
