"""A small reverse-mode automatic differentiation tape over numpy arrays.

Only the primitives the learners in this package need are provided. A
:class:`Var` wraps an array value. Operations record their parents and a
vector-Jacobian product, and :meth:`Var.backward` accumulates gradients in
reverse topological order. :func:`stop_gradient` cuts the graph, which is
how bootstrapped targets are detached.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "as_var",
    "stop_gradient",
    "exp",
    "log",
    "tanh",
    "relu",
    "square",
    "sqrt",
    "softmax",
    "log_softmax",
    "gather",
    "minimum",
    "maximum",
    "clip",
    "concat",
    "where",
    "vsum",
    "vmean",
    "numerical_grad",
]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


class Var:
    """Differentiable array node."""

    __array_priority__ = 100.0

    def __init__(self, value, parents=(), requires_grad: bool = False):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents  # tuple of (Var, vjp)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self.grad = None

    # ----------------------------------------------------------------- basics
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var({self.value!r})"

    def __len__(self):
        return self.value.shape[0]

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward needs a scalar output or an explicit seed")
            seed = np.ones_like(self.value)
        order, seen = [], set()

        def visit(v):
            stack = [(v, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p, _ in node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(seed, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, vjp in node.parents:
                if not p.requires_grad:
                    continue
                gp = _unbroadcast(np.asarray(vjp(g), dtype=float), p.value.shape)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + gp
                else:
                    grads[id(p)] = gp

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        o = as_var(other)
        return Var(self.value + o.value, ((self, lambda g: g), (o, lambda g: g)))

    __radd__ = __add__

    def __sub__(self, other):
        o = as_var(other)
        return Var(self.value - o.value, ((self, lambda g: g), (o, lambda g: -g)))

    def __rsub__(self, other):
        return as_var(other) - self

    def __neg__(self):
        return Var(-self.value, ((self, lambda g: -g),))

    def __mul__(self, other):
        o = as_var(other)
        a, b = self.value, o.value
        return Var(a * b, ((self, lambda g: g * b), (o, lambda g: g * a)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = as_var(other)
        a, b = self.value, o.value
        return Var(a / b, ((self, lambda g: g / b), (o, lambda g: -g * a / (b * b))))

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __pow__(self, k: float):
        a = self.value
        return Var(a ** k, ((self, lambda g: g * k * a ** (k - 1)),))

    def __matmul__(self, other):
        o = as_var(other)
        a, b = self.value, o.value

        def ga(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b
            if a.ndim == 1:
                return b @ g
            if b.ndim == 1:
                return np.outer(g, b)
            return g @ b.T

        def gb(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * a
            if a.ndim == 1:
                return np.outer(a, g)
            return a.T @ g

        return Var(a @ b, ((self, ga), (o, gb)))

    def __rmatmul__(self, other):
        return as_var(other) @ self

    def __getitem__(self, idx):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], ((self, vjp),))

    def reshape(self, *shape):
        orig = self.value.shape
        return Var(self.value.reshape(*shape), ((self, lambda g: g.reshape(orig)),))

    @property
    def T(self):
        return Var(self.value.T, ((self, lambda g: g.T),))

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis, keepdims)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def stop_gradient(x) -> Var:
    """Constant copy of ``x``: no gradient flows through it."""
    return Var(np.array(as_var(x).value))


def vsum(x, axis=None, keepdims=False) -> Var:
    x = as_var(x)
    shape = x.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return Var(x.value.sum(axis=axis, keepdims=keepdims), ((x, vjp),))


def vmean(x, axis=None, keepdims=False) -> Var:
    x = as_var(x)
    n = x.value.size if axis is None else np.prod([x.value.shape[a] for a in np.atleast_1d(axis)])
    return vsum(x, axis, keepdims) / float(n)


def exp(x) -> Var:
    x = as_var(x)
    y = np.exp(x.value)
    return Var(y, ((x, lambda g: g * y),))


def log(x) -> Var:
    x = as_var(x)
    a = x.value
    return Var(np.log(a), ((x, lambda g: g / a),))


def sqrt(x) -> Var:
    x = as_var(x)
    y = np.sqrt(x.value)
    return Var(y, ((x, lambda g: g * 0.5 / y),))


def tanh(x) -> Var:
    x = as_var(x)
    y = np.tanh(x.value)
    return Var(y, ((x, lambda g: g * (1.0 - y * y)),))


def relu(x) -> Var:
    x = as_var(x)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), ((x, lambda g: g * mask),))


def square(x) -> Var:
    x = as_var(x)
    a = x.value
    return Var(a * a, ((x, lambda g: 2.0 * g * a),))


def log_softmax(x, axis=-1) -> Var:
    x = as_var(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return Var(y, ((x, lambda g: g - p * g.sum(axis=axis, keepdims=True)),))


def softmax(x, axis=-1) -> Var:
    x = as_var(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    return Var(p, ((x, lambda g: p * (g - (g * p).sum(axis=axis, keepdims=True))),))


def gather(x, idx) -> Var:
    """Row-wise pick: ``out[i] = x[i, idx[i]]`` for a 2-D ``x``."""
    x = as_var(x)
    idx = np.asarray(idx, dtype=int)
    rows = np.arange(x.value.shape[0])
    return x[rows, idx]


def minimum(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    pick_a = a.value <= b.value
    return Var(np.where(pick_a, a.value, b.value),
               ((a, lambda g: g * pick_a), (b, lambda g: g * ~pick_a)))


def maximum(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    pick_a = a.value >= b.value
    return Var(np.where(pick_a, a.value, b.value),
               ((a, lambda g: g * pick_a), (b, lambda g: g * ~pick_a)))


def clip(x, lo, hi) -> Var:
    """Clamp with zero gradient outside ``[lo, hi]``."""
    x = as_var(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return Var(np.clip(x.value, lo, hi), ((x, lambda g: g * inside),))


def where(cond, a, b) -> Var:
    a, b = as_var(a), as_var(b)
    cond = np.asarray(cond, dtype=bool)
    return Var(np.where(cond, a.value, b.value),
               ((a, lambda g: g * cond), (b, lambda g: g * ~cond)))


def concat(xs, axis=-1) -> Var:
    xs = [as_var(x) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    parents = []
    for i, x in enumerate(xs):
        def vjp(g, i=i):
            return np.split(g, cuts, axis=axis)[i]
        parents.append((x, vjp))
    return Var(np.concatenate([x.value for x in xs], axis=axis), tuple(parents))


def numerical_grad(f, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    p = np.array(p, dtype=float)
    g = np.zeros_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + h
        fp = f(p)
        p[i] = old - h
        fm = f(p)
        p[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g
