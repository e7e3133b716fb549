"""Reverse-mode automatic differentiation over NumPy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` nodes in
execution order, so the node list is topologically sorted by construction and
the backward pass is a single reverse sweep.  Values are float64 arrays of any
shape; binary operations broadcast like NumPy and the adjoints are summed back
to the operand shapes.

The module-level functions (``exp``, ``where``, ``stack`` ...) accept plain
arrays as well.  When no argument is a :class:`Var` they simply return the
NumPy result, which lets the same expression code serve as a float evaluator.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape", "Var", "is_var", "value", "exp", "log", "sqrt", "abs", "tanh",
    "sigmoid", "softplus", "relu", "sin", "cos", "where", "stack", "concat",
    "matmul", "sum", "mean", "amin", "amax", "maximum", "minimum", "square",
    "custom",
]

VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of operations with an adjoint buffer."""

    def __init__(self) -> None:
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[VJP | None] = []
        self.kinds: list[str] = []
        self.adjoints: list[np.ndarray | None] | None = None

    def __len__(self) -> int:
        return len(self.values)

    def leaf(self, value, kind: str = "leaf") -> "Var":
        return self._push(np.array(value, dtype=np.float64), (), None, kind)

    def _push(self, value, parents, vjp, kind) -> "Var":
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        self.kinds.append(kind)
        return Var(self, len(self.values) - 1)

    def zero_grad(self) -> None:
        self.adjoints = None

    def backward(self, out: "Var", seed=None) -> None:
        """Accumulate d(out)/d(node) into ``self.adjoints`` for every node."""
        if out.tape is not self:
            raise ValueError("output belongs to another tape")
        adj: list[np.ndarray | None] = [None] * len(self.values)
        v = self.values[out.idx]
        adj[out.idx] = np.ones_like(v) if seed is None else np.broadcast_to(
            np.asarray(seed, dtype=np.float64), v.shape).copy()
        for i in range(out.idx, -1, -1):
            g = adj[i]
            vjp = self.vjps[i]
            if g is None or vjp is None:
                continue
            for p, gp in zip(self.parents[i], vjp(g)):
                if gp is None:
                    continue
                if adj[p] is None:
                    adj[p] = np.array(gp, dtype=np.float64, copy=True)
                else:
                    adj[p] += gp
        self.adjoints = adj

    def grad(self, var: "Var") -> np.ndarray:
        if self.adjoints is None:
            raise RuntimeError("backward() has not been run")
        g = self.adjoints[var.idx]
        return np.zeros_like(self.values[var.idx]) if g is None else g


class Var:
    """Handle to a tape node."""

    __slots__ = ("tape", "idx")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, idx: int) -> None:
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var(#{self.idx}, {self.tape.kinds[self.idx]}, {self.value!r})"

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad(self)

    # arithmetic -----------------------------------------------------------
    def __add__(self, o):
        return _binary(self, o, np.add, lambda g, a, b, r: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, o):
        return _binary(self, o, np.subtract, lambda g, a, b, r: (g, -g), "sub")

    def __rsub__(self, o):
        return _binary(o, self, np.subtract, lambda g, a, b, r: (g, -g), "sub")

    def __mul__(self, o):
        return _binary(self, o, np.multiply, lambda g, a, b, r: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, o):
        return _binary(self, o, np.divide,
                       lambda g, a, b, r: (g / b, -g * r / b), "div")

    def __rtruediv__(self, o):
        return _binary(o, self, np.divide,
                       lambda g, a, b, r: (g / b, -g * r / b), "div")

    def __neg__(self):
        return _unary(self, np.negative(self.value), lambda g: -g, "neg")

    def __pow__(self, k):
        if is_var(k):
            raise TypeError("variable exponents are not supported")
        a = self.value
        return _unary(self, a ** k, lambda g: g * k * a ** (k - 1), "pow")

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        a = self.value
        out = a[key]

        basic = _is_basic_index(key)

        def vjp(g):
            full = np.zeros_like(a)
            if basic:
                full[key] = g
            else:
                np.add.at(full, key, g)
            return (full,)

        return self.tape._push(np.array(out, dtype=np.float64), (self.idx,), vjp, "index")

    def reshape(self, *shape):
        a = self.value
        return _unary(self, a.reshape(*shape), lambda g: g.reshape(a.shape), "reshape")

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value(x) -> np.ndarray:
    """Numeric value of a Var or array-like."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis or k is None
               for k in parts)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands live on different tapes")
    return tape


def _unary(x: Var, out, dfn, kind):
    return x.tape._push(np.asarray(out, dtype=np.float64), (x.idx,),
                        lambda g: (dfn(g),), kind)


def _binary(x, y, fn, dfn, kind):
    tape = _tape_of(x, y)
    a, b = value(x), value(y)
    r = fn(a, b)
    if tape is None:
        return r
    xv, yv = isinstance(x, Var), isinstance(y, Var)
    if xv and yv:
        parents = (x.idx, y.idx)

        def vjp(g):
            ga, gb = dfn(g, a, b, r)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    elif xv:
        parents = (x.idx,)

        def vjp(g):
            return (_unbroadcast(dfn(g, a, b, r)[0], a.shape),)
    else:
        parents = (y.idx,)

        def vjp(g):
            return (_unbroadcast(dfn(g, a, b, r)[1], b.shape),)
    return tape._push(np.asarray(r, dtype=np.float64), parents, vjp, kind)


def _elementwise(name, f, df_from):
    """df_from(a, r) gives the local derivative given input a and output r."""

    def op(x):
        if not isinstance(x, Var):
            return f(np.asarray(x, dtype=np.float64))
        a = x.value
        r = f(a)
        return _unary(x, r, lambda g: g * df_from(a, r), name)

    op.__name__ = name
    return op


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _sigmoid_any(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return _sigmoid(a.reshape(1)).reshape(())
    return _sigmoid(a)


exp = _elementwise("exp", np.exp, lambda a, r: r)
log = _elementwise("log", np.log, lambda a, r: 1.0 / a)
sqrt = _elementwise("sqrt", np.sqrt, lambda a, r: 0.5 / r)
abs = _elementwise("abs", np.abs, lambda a, r: np.sign(a))
tanh = _elementwise("tanh", np.tanh, lambda a, r: 1.0 - r * r)
sigmoid = _elementwise("sigmoid", _sigmoid_any, lambda a, r: r * (1.0 - r))
softplus = _elementwise("softplus", _softplus, lambda a, r: _sigmoid_any(a))
relu = _elementwise("relu", lambda a: np.maximum(a, 0.0), lambda a, r: (a > 0).astype(np.float64))
sin = _elementwise("sin", np.sin, lambda a, r: np.cos(a))
cos = _elementwise("cos", np.cos, lambda a, r: -np.sin(a))
square = _elementwise("square", np.square, lambda a, r: 2.0 * a)


def transpose(x):
    if not isinstance(x, Var):
        return np.swapaxes(np.asarray(x), -1, -2)
    return _unary(x, np.swapaxes(x.value, -1, -2), lambda g: np.swapaxes(g, -1, -2), "transpose")


def where(cond, x, y):
    """Elementwise select; the adjoint flows only into the chosen branch."""
    cond = np.asarray(cond, dtype=bool)
    tape = _tape_of(x, y)
    a, b = value(x), value(y)
    r = np.where(cond, a, b)
    if tape is None:
        return r
    parents, sides = [], []
    if isinstance(x, Var):
        parents.append(x.idx)
        sides.append((True, a.shape))
    if isinstance(y, Var):
        parents.append(y.idx)
        sides.append((False, b.shape))

    def vjp(g):
        return tuple(_unbroadcast(np.where(cond, g, 0.0) if take else np.where(cond, 0.0, g), shp)
                     for take, shp in sides)

    return tape._push(np.asarray(r, dtype=np.float64), tuple(parents), vjp, "where")


def stack(items, axis=0):
    tape = _tape_of(*items)
    vals = [value(v) for v in items]
    r = np.stack(np.broadcast_arrays(*vals), axis=axis)
    if tape is None:
        return r
    idx = [i for i, v in enumerate(items) if isinstance(v, Var)]

    def vjp(g):
        return tuple(_unbroadcast(np.take(g, i, axis=axis), vals[i].shape) for i in idx)

    return tape._push(r, tuple(items[i].idx for i in idx), vjp, "stack")


def concat(items, axis=0):
    tape = _tape_of(*items)
    vals = [value(v) for v in items]
    r = np.concatenate(vals, axis=axis)
    if tape is None:
        return r
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    idx = [i for i, v in enumerate(items) if isinstance(v, Var)]

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in idx)

    return tape._push(r, tuple(items[i].idx for i in idx), vjp, "concat")


def matmul(x, y):
    tape = _tape_of(x, y)
    a, b = value(x), value(y)
    r = np.matmul(a, b)
    if tape is None:
        return r

    def grads(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b, g * a
        if b.ndim == 1:
            ga = g[..., :, None] * b
            gb = np.einsum("...i,...ij->...j", g, a)
            return ga, gb
        if a.ndim == 1:
            ga = np.einsum("...j,...ij->...i", g, b)
            gb = a[..., :, None] * g[..., None, :]
            return ga, gb
        return np.matmul(g, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), g)

    xv, yv = isinstance(x, Var), isinstance(y, Var)
    parents = tuple(v.idx for v in (x, y) if isinstance(v, Var))

    def vjp(g):
        ga, gb = grads(g)
        out = []
        if xv:
            out.append(_unbroadcast(ga, a.shape))
        if yv:
            out.append(_unbroadcast(gb, b.shape))
        return tuple(out)

    return tape._push(np.asarray(r, dtype=np.float64), parents, vjp, "matmul")


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    a = x.value
    r = np.sum(a, axis=axis, keepdims=keepdims)
    return _unary(x, r, lambda g: _expand(g, a.shape, axis, keepdims).copy(), "sum")


def mean(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.mean(x, axis=axis, keepdims=keepdims)
    a = x.value
    n = a.size if axis is None else a.shape[axis]
    r = np.mean(a, axis=axis, keepdims=keepdims)
    return _unary(x, r, lambda g: _expand(g, a.shape, axis, keepdims) / n, "mean")


def _extreme(x, axis, pick, name):
    a = value(x)
    i = pick(a, axis=axis)
    r = np.take_along_axis(a, np.expand_dims(i, axis), axis=axis).squeeze(axis)
    if not isinstance(x, Var):
        return r

    def vjp(g):
        full = np.zeros_like(a)
        np.put_along_axis(full, np.expand_dims(i, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return x.tape._push(np.asarray(r, dtype=np.float64), (x.idx,), vjp, name)


def amin(x, axis=-1):
    """Minimum along ``axis``; ties resolve to the first index."""
    return _extreme(x, axis, np.argmin, "amin")


def amax(x, axis=-1):
    """Maximum along ``axis``; ties resolve to the first index."""
    return _extreme(x, axis, np.argmax, "amax")


def maximum(x, y):
    return where(value(x) >= value(y), x, y)


def minimum(x, y):
    return where(value(x) <= value(y), x, y)


def custom(inputs: Sequence, out: np.ndarray, vjp: VJP, kind: str):
    """Record an opaque operation whose vector-Jacobian product is supplied.

    ``vjp`` receives the output adjoint and must return one adjoint per entry
    of ``inputs`` (``None`` for entries that are not Vars).
    """
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    mask = [isinstance(v, Var) for v in inputs]

    def sub_vjp(g):
        gs = vjp(g)
        return tuple(gv for gv, m in zip(gs, mask) if m)

    return tape._push(np.asarray(out, dtype=np.float64),
                      tuple(v.idx for v in inputs if isinstance(v, Var)), sub_vjp, kind)
