"""A small reverse-mode differentiation engine over numpy arrays.

Every differentiable value is a :class:`Var` owned by a :class:`Tape`.  Nodes
are appended to the tape as they are created, so the tape order is already a
topological order and :meth:`Tape.backward` simply walks it in reverse.

The module-level functions (``sqrt``, ``where``, ``clip`` ...) accept plain
arrays as well as ``Var`` and fall back to numpy when no argument is a
``Var``.  The module itself can therefore be passed as the ``xp`` namespace of
code written once for both inference and training.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value) -> "Var":
        """A leaf whose gradient will be reported by :meth:`backward`."""
        return Var(np.array(value, dtype=float), self, (), None)

    def backward(self, root: "Var", seed=None) -> None:
        if root.tape is not self:
            raise ParameterError("root does not belong to this tape")
        for n in self.nodes:
            n.grad = None
        root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=float)
        for n in reversed(self.nodes):
            if n.grad is None or n.vjp is None:
                continue
            contribs = n.vjp(n.grad)
            for parent, g in zip(n.parents, contribs):
                if parent is None or g is None:
                    continue
                g = _unbroadcast(g, parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g


class Var:
    __array_priority__ = 1000

    def __init__(self, value, tape: Tape, parents, vjp):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        tape.nodes.append(self)

    # shape helpers -------------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # comparisons yield plain boolean arrays (no gradient)
    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _val(x):
    return x.value if isinstance(x, Var) else x


def _par(x):
    return x if isinstance(x, Var) else None


def value(x):
    return _val(x)


# primitives ------------------------------------------------------------------


def add(a, b):
    t = _tape_of(a, b)
    if t is None:
        return a + b
    return Var(_val(a) + _val(b), t, (_par(a), _par(b)), lambda g: (g, g))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return Var(-a.value, a.tape, (a,), lambda g: (-g,))


def mul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return a * b
    av, bv = _val(a), _val(b)
    return Var(av * bv, t, (_par(a), _par(b)), lambda g: (g * bv, g * av))


def div(a, b):
    t = _tape_of(a, b)
    if t is None:
        return a / b
    av, bv = _val(a), _val(b)
    out = av / bv
    return Var(out, t, (_par(a), _par(b)), lambda g: (g / bv, -g * out / bv))


def power(a, k):
    if isinstance(k, Var):
        raise ParameterError("only constant exponents are supported")
    if not isinstance(a, Var):
        return a**k
    av = a.value
    return Var(av**k, a.tape, (a,), lambda g: (g * k * av ** (k - 1),))


def matmul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return a @ b
    av, bv = _val(a), _val(b)

    def vjp(g):
        ga = gb = None
        if isinstance(a, Var):
            ga = g @ np.swapaxes(bv, -1, -2) if bv.ndim > 1 else np.multiply.outer(g, bv)
        if isinstance(b, Var):
            if av.ndim == 1:
                gb = np.multiply.outer(av, g)
            else:
                gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return Var(av @ bv, t, (_par(a), _par(b)), vjp)


def getitem(a, idx):
    if not isinstance(a, Var):
        return a[idx]
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.value[idx], a.tape, (a,), vjp)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.value.shape
    return Var(a.value.reshape(shape), a.tape, (a,), lambda g: (g.reshape(old),))


def transpose(a):
    if not isinstance(a, Var):
        return np.transpose(a)
    return Var(a.value.T, a.tape, (a,), lambda g: (g.T,))


def sum(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(np.sum(a.value, axis=axis, keepdims=keepdims), a.tape, (a,), vjp)


def mean(a, axis=None):
    n = np.size(_val(a)) if axis is None else np.shape(_val(a))[axis]
    return sum(a, axis=axis) * (1.0 / n)


def _unary(fn, dfn):
    def op(a):
        if not isinstance(a, Var):
            return fn(a)
        out = fn(a.value)
        return Var(out, a.tape, (a,), lambda g: (g * dfn(a.value, out),))

    return op


sqrt = _unary(np.sqrt, lambda x, y: 0.5 / y)
exp = _unary(np.exp, lambda x, y: y)
log = _unary(np.log, lambda x, y: 1.0 / x)
tanh = _unary(np.tanh, lambda x, y: 1.0 - y * y)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


sigmoid = _unary(_sigmoid, lambda x, y: y * (1.0 - y))
softplus = _unary(lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid(x))


def where(cond, a, b):
    cond = _val(cond)
    t = _tape_of(a, b)
    if t is None:
        return np.where(cond, a, b)
    return Var(np.where(cond, _val(a), _val(b)), t, (_par(a), _par(b)),
               lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


def clip(a, lo, hi):
    """Clamp with gradient 1 on the closed interval and 0 outside."""
    if not isinstance(a, Var):
        return np.clip(a, lo, hi)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return Var(np.clip(av, lo, hi), a.tape, (a,), lambda g: (np.where(inside, g, 0.0),))


def maximum(a, b):
    """Elementwise max; ties send the gradient to the first argument."""
    t = _tape_of(a, b)
    if t is None:
        return np.maximum(a, b)
    av, bv = _val(a), _val(b)
    first = av >= bv
    return Var(np.maximum(av, bv), t, (_par(a), _par(b)),
               lambda g: (np.where(first, g, 0.0), np.where(first, 0.0, g)))


def minimum(a, b):
    return neg(maximum(neg(a), neg(b)))


def concatenate(xs, axis=0):
    xs = list(xs)
    t = _tape_of(*xs)
    if t is None:
        return np.concatenate(xs, axis=axis)
    vals = [np.asarray(_val(x)) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Var(np.concatenate(vals, axis=axis), t, tuple(_par(x) for x in xs), vjp)


def stack(xs, axis=0):
    xs = [reshape(x, np.shape(_val(x))[:axis] + (1,) + np.shape(_val(x))[axis:]) for x in xs]
    return concatenate(xs, axis=axis)


def norm(a, axis=None):
    """Euclidean norm with a zero (sub)gradient at the origin."""
    if not isinstance(a, Var):
        return np.sqrt(np.sum(a * a, axis=axis))
    av = a.value
    n = np.sqrt(np.sum(av * av, axis=axis))

    def vjp(g):
        nk = n if axis is None else np.expand_dims(n, axis)
        gk = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, gk * av / safe, 0.0),)

    return Var(n, a.tape, (a,), vjp)


def atan2(y, x):
    """atan2 with its analytic Jacobian; the (0, 0) input gets zero gradient."""
    t = _tape_of(y, x)
    if t is None:
        return np.arctan2(y, x)
    yv, xv = _val(y), _val(x)
    r2 = xv * xv + yv * yv
    safe = np.where(r2 > 0, r2, 1.0)
    return Var(np.arctan2(yv, xv), t, (_par(y), _par(x)),
               lambda g: (np.where(r2 > 0, g * xv / safe, 0.0), np.where(r2 > 0, -g * yv / safe, 0.0)))


def kkt_solve(factor, eta):
    """Batched solve with a pre-factorized KKT matrix; rows of ``eta`` are right-hand sides."""
    if not isinstance(eta, Var):
        return factor.solve(eta)
    return Var(factor.solve(eta.value), eta.tape, (eta,), lambda g: (factor.solve_transposed(g),))
