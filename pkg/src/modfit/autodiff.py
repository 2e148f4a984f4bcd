"""Minimal reverse-mode automatic differentiation over numpy arrays.

The training loss is a real scalar function of real parameters; complex
intermediates are carried by the calling code as explicit (real, imag)
array pairs, so the tape only ever sees real-valued elementwise math.
The primitive set is deliberately small -- {+, -, *, /, integer power,
exp, log, sin, cos, tan, tanh, sigmoid} plus the structural ops
sum / reshape / gather -- so every primitive is covered by the
finite-difference checks in :mod:`modfit.grad`.

Each :class:`Tape` owns one computation; concurrent runs use independent
tapes. Backward propagation walks the recorded nodes in reverse order,
which makes repeated evaluation bit-identical.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import NumericAbortError


class Var:
    """One node of the tape: a float64 array plus its adjoint slot."""

    # Defer all numpy binary ops to Var.__r*__ so ndarray * Var works.
    __array_ufunc__ = None
    __slots__ = ("tape", "value", "grad", "op", "_inputs")

    def __init__(self, tape, value, op="leaf", inputs=()):
        self.tape = tape
        self.value = value
        self.grad = None
        self.op = op
        self._inputs = inputs  # tuple of (parent Var, pull(out_grad) -> grad)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return powi(self, k)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum(self, axis=axis)


class Tape:
    """Wengert list of recorded operations with adjoint accumulators.

    ``check_finite=True`` validates every intermediate and raises a
    :class:`NumericAbortError` naming the first offending operation;
    it is off by default and enabled when re-running a failed forward
    pass for diagnosis.
    """

    def __init__(self, check_finite: bool = False):
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []
        self.check_finite = check_finite

    def leaf(self, value, name: str = "leaf") -> Var:
        v = self._record(np.asarray(value, dtype=np.float64), name, ())
        self.leaves.append(v)
        return v

    def _record(self, value, op, inputs) -> Var:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericAbortError(
                f"non-finite value produced by op '{op}' (node {len(self.nodes)})"
            )
        v = Var(self, value, op, inputs)
        self.nodes.append(v)
        return v

    def backward(self, out: Var) -> None:
        """Accumulate adjoints of ``out`` into every recorded node.

        ``out`` must be scalar-shaped. Leaves untouched by the forward
        pass receive an adjoint of exactly zero.
        """
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        if out.value.size != 1:
            raise ValueError("backward() expects a scalar output")
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            for parent, pull in node._inputs:
                contrib = pull(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib
        for leaf in self.leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


def _tape_of(a, b=None):
    ta = a.tape if isinstance(a, Var) else None
    tb = b.tape if isinstance(b, Var) else None
    if ta is not None and tb is not None and ta is not tb:
        raise ValueError("operands belong to different tapes")
    return ta if ta is not None else tb


def _binary(a, b, op, fwd, dleft, dright):
    tape = _tape_of(a, b)
    av = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Var) else np.asarray(b, dtype=np.float64)
    out = fwd(av, bv)
    inputs = []
    if isinstance(a, Var):
        inputs.append((a, lambda g: _unbroadcast(dleft(g, av, bv), av.shape)))
    if isinstance(b, Var):
        inputs.append((b, lambda g: _unbroadcast(dright(g, av, bv), bv.shape)))
    return tape._record(out, op, tuple(inputs))


def _unary(x, op, fwd, dfn):
    out = fwd(x.value)
    return x.tape._record(
        out, op, ((x, lambda g: dfn(g, x.value, out)),)
    )


# -- elementary arithmetic (dispatch on Var vs ndarray) ----------------


def add(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.add(a, b)
    return _binary(a, b, "add", np.add, lambda g, av, bv: g, lambda g, av, bv: g)


def sub(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.subtract(a, b)
    return _binary(
        a, b, "sub", np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g
    )


def mul(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.multiply(a, b)
    return _binary(
        a, b, "mul", np.multiply,
        lambda g, av, bv: g * bv, lambda g, av, bv: g * av,
    )


def div(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.divide(a, b)
    return _binary(
        a, b, "div", np.divide,
        lambda g, av, bv: g / bv, lambda g, av, bv: -g * av / (bv * bv),
    )


def powi(x, k):
    """x raised to an integer power (the only power the tape supports)."""
    if not isinstance(k, (int, np.integer)):
        raise TypeError("powi() requires an integer exponent")
    k = int(k)
    if not isinstance(x, Var):
        return np.power(x, k)
    return _unary(
        x, f"powi[{k}]", lambda v: np.power(v, k),
        lambda g, v, out: g * k * np.power(v, k - 1) if k != 0 else np.zeros_like(v),
    )


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    return _unary(x, "exp", np.exp, lambda g, v, out: g * out)


def log(x):
    if not isinstance(x, Var):
        return np.log(x)
    return _unary(x, "log", np.log, lambda g, v, out: g / v)


def sin(x):
    if not isinstance(x, Var):
        return np.sin(x)
    return _unary(x, "sin", np.sin, lambda g, v, out: g * np.cos(v))


def cos(x):
    if not isinstance(x, Var):
        return np.cos(x)
    return _unary(x, "cos", np.cos, lambda g, v, out: -g * np.sin(v))


def tan(x):
    if not isinstance(x, Var):
        return np.tan(x)
    return _unary(x, "tan", np.tan, lambda g, v, out: g * (1.0 + out * out))


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    return _unary(x, "tanh", np.tanh, lambda g, v, out: g * (1.0 - out * out))


def sigmoid(x):
    if not isinstance(x, Var):
        return expit(np.asarray(x, dtype=np.float64))
    return _unary(x, "sigmoid", expit, lambda g, v, out: g * out * (1.0 - out))


# -- structural ops ----------------------------------------------------


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming at call sites
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    shape = x.value.shape

    def pull(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return x.tape._record(
        np.sum(x.value, axis=axis), "sum", ((x, pull),)
    )


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    orig = x.value.shape
    return x.tape._record(
        np.reshape(x.value, shape), "reshape",
        ((x, lambda g: np.reshape(g, orig)),),
    )


def gather(x, indices):
    """Select rows along axis 0; the adjoint scatter-adds them back."""
    idx = np.asarray(indices, dtype=np.intp)
    if not isinstance(x, Var):
        return np.asarray(x)[idx]

    def pull(g):
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return out

    return x.tape._record(x.value[idx], "gather", ((x, pull),))


def value_of(x):
    """Plain ndarray view of a Var or array-like (for guards/logging)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
