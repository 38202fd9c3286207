"""Tape-based reverse-mode differentiation over small numpy arrays.

Only the primitives needed by the models in this package are supported:
affine maps (``@``, ``+``, ``-``), elementwise arithmetic, ``tanh``,
``softplus``, ``relu``, ``sin``/``cos``, slicing, reshaping and stacking.
Any other numpy ufunc or array function applied to a :class:`Var` raises
:class:`~dilar.errors.UnsupportedOperation`, so a loss cannot silently lose
its gradient.

Model code is written against plain numpy; passing :class:`Var` objects
through the same code records the computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from dilar.errors import InvalidArgument, UnsupportedOperation


def np_softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def np_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np_softplus(-x))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Var:
    """A node on the tape: a float64 array plus how to push gradients to its parents."""

    __slots__ = ("value", "parents", "grad")
    __array_priority__ = 1000.0

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents  # tuple of (Var, vjp)
        self.grad = None

    # -- array-like surface ------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __float__(self):
        raise UnsupportedOperation("float() on a tape variable drops its gradient; use .value")

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    # comparisons act on values only (branching, not differentiated)
    def __gt__(self, other):
        return self.value > value_of(other)

    def __lt__(self, other):
        return self.value < value_of(other)

    def __ge__(self, other):
        return self.value >= value_of(other)

    def __le__(self, other):
        return self.value <= value_of(other)

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)

    def __pos__(self):
        return self

    def __pow__(self, p):
        if isinstance(p, Var):
            raise UnsupportedOperation("variable exponents are not supported")
        p = float(p)
        x = self.value
        return _unary(self, x**p, lambda g: g * p * x ** (p - 1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], ((self, vjp),))

    def reshape(self, *shape):
        old = self.value.shape
        return _unary(self, self.value.reshape(*shape), lambda g: g.reshape(old))

    @property
    def T(self):
        return _unary(self, self.value.T, lambda g: g.T)

    def sum(self):
        shape = self.value.shape
        return _unary(self, self.value.sum(), lambda g: np.broadcast_to(g, shape).copy())

    # -- numpy protocol ------------------------------------------------------
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedOperation(f"{ufunc.__name__}.{method} on a tape variable")
        fn = _UFUNCS.get(ufunc)
        if fn is None:
            raise UnsupportedOperation(f"numpy.{ufunc.__name__} is not a supported primitive")
        return fn(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        fn = _ARRAY_FUNCS.get(func)
        if fn is None:
            raise UnsupportedOperation(f"numpy.{func.__name__} is not a supported primitive")
        return fn(*args, **kwargs)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _const(x):
    return np.asarray(x, dtype=np.float64)


def _unary(x: Var, value, vjp):
    return Var(value, ((x, vjp),))


def _binary(a, b, value, vjp_a, vjp_b):
    parents = []
    if isinstance(a, Var):
        parents.append((a, vjp_a))
    if isinstance(b, Var):
        parents.append((b, vjp_b))
    return Var(value, tuple(parents))


def add(a, b):
    av, bv = _const(value_of(a)), _const(value_of(b))
    return _binary(
        a, b, av + bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    )


def sub(a, b):
    av, bv = _const(value_of(a)), _const(value_of(b))
    return _binary(
        a, b, av - bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    )


def mul(a, b):
    av, bv = _const(value_of(a)), _const(value_of(b))
    return _binary(
        a, b, av * bv,
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    )


def div(a, b):
    av, bv = _const(value_of(a)), _const(value_of(b))
    return _binary(
        a, b, av / bv,
        lambda g: _unbroadcast(g / bv, av.shape),
        lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape),
    )


def matmul(a, b):
    av, bv = _const(value_of(a)), _const(value_of(b))
    if av.ndim == 2 and bv.ndim == 1:
        da, db = (lambda g: np.outer(g, bv)), (lambda g: av.T @ g)
    elif av.ndim == 2 and bv.ndim == 2:
        da, db = (lambda g: g @ bv.T), (lambda g: av.T @ g)
    elif av.ndim == 1 and bv.ndim == 2:
        da, db = (lambda g: bv @ g), (lambda g: np.outer(av, g))
    elif av.ndim == 1 and bv.ndim == 1:
        da, db = (lambda g: g * bv), (lambda g: g * av)
    else:
        raise UnsupportedOperation(f"matmul of shapes {av.shape} and {bv.shape}")
    return _binary(a, b, av @ bv, da, db)


def _power(a, p):
    if isinstance(p, Var):
        raise UnsupportedOperation("variable exponents are not supported")
    return a**p


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    y = np.tanh(x.value)
    return _unary(x, y, lambda g: g * (1.0 - y * y))


def sin(x):
    if not isinstance(x, Var):
        return np.sin(x)
    v = x.value
    return _unary(x, np.sin(v), lambda g: g * np.cos(v))


def cos(x):
    if not isinstance(x, Var):
        return np.cos(x)
    v = x.value
    return _unary(x, np.cos(v), lambda g: -g * np.sin(v))


def square(x):
    if not isinstance(x, Var):
        return np.square(x)
    v = x.value
    return _unary(x, v * v, lambda g: 2.0 * g * v)


def softplus(x):
    """Overflow-safe ``log(1 + exp(x))``."""
    if not isinstance(x, Var):
        return np_softplus(x)
    v = x.value
    return _unary(x, np_softplus(v), lambda g: g * np_sigmoid(v))


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    v = x.value
    return _unary(x, np.maximum(v, 0.0), lambda g: g * (v > 0.0))


def stack(items, axis=0):
    if axis != 0:
        raise UnsupportedOperation("stack is only supported along axis 0")
    items = list(items)
    values = [_const(value_of(it)) for it in items]
    out = np.stack(values)
    if not any(isinstance(it, Var) for it in items):
        return out
    parents = tuple(
        (it, (lambda g, i=i: g[i])) for i, it in enumerate(items) if isinstance(it, Var)
    )
    return Var(out, parents)


def concatenate(items, axis=0):
    if axis != 0:
        raise UnsupportedOperation("concatenate is only supported along axis 0")
    items = list(items)
    values = [np.atleast_1d(_const(value_of(it))) for it in items]
    out = np.concatenate(values)
    if not any(isinstance(it, Var) for it in items):
        return out
    parents, offset = [], 0
    for it, v in zip(items, values):
        n = v.shape[0]
        if isinstance(it, Var):
            shape = it.value.shape
            parents.append((it, (lambda g, a=offset, b=offset + n, s=shape: g[a:b].reshape(s))))
        offset += n
    return Var(out, tuple(parents))


def _sum(x, axis=None, **kwargs):
    if axis is not None or kwargs:
        raise UnsupportedOperation("only full reductions are supported")
    return x.sum() if isinstance(x, Var) else np.sum(x)


def _isfinite(x):
    return np.isfinite(value_of(x))


def _all_finite(x):
    return bool(np.all(np.isfinite(value_of(x))))


_UFUNCS = {
    np.add: add,
    np.subtract: sub,
    np.multiply: mul,
    np.true_divide: div,
    np.negative: lambda x: -x,
    np.positive: lambda x: x,
    np.matmul: matmul,
    np.power: _power,
    np.tanh: tanh,
    np.sin: sin,
    np.cos: cos,
    np.square: square,
    np.isfinite: _isfinite,
}

_ARRAY_FUNCS = {
    np.stack: stack,
    np.concatenate: concatenate,
    np.sum: _sum,
    np.dot: matmul,
    np.all: lambda x, **kw: np.all(value_of(x), **kw),
    np.shape: lambda x: x.shape,
    np.ndim: lambda x: x.ndim,
    np.size: lambda x: x.size,
}


def backward(out: Var) -> None:
    """Accumulate d(out)/d(node) into ``node.grad`` for every node reachable from ``out``."""
    if out.size != 1:
        raise InvalidArgument("backward needs a scalar output")
    order, seen = [], set()
    stack_ = [(out, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack_.append((parent, False))
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


@dataclass(frozen=True)
class GradResult:
    loss_value: float
    gradient: np.ndarray


def gradient_of(loss_fn: Callable[[dict], object], params) -> GradResult:
    """Reverse-mode gradient of ``loss_fn`` with respect to every entry of ``params``.

    ``loss_fn`` receives a dict mapping entry names to tape variables and
    must return a scalar built from supported primitives.
    """
    leaf = Var(params.flatten())
    out = loss_fn(params.unflatten(leaf))
    if not isinstance(out, Var):
        # loss does not depend on the parameters
        return GradResult(float(np.asarray(out).reshape(())), np.zeros(params.total_dim))
    if out.size != 1:
        raise InvalidArgument(f"loss must be scalar, got shape {out.shape}")
    backward(out)
    grad = leaf.grad if leaf.grad is not None else np.zeros(params.total_dim)
    return GradResult(float(out.value.reshape(())), np.array(grad, dtype=np.float64))
