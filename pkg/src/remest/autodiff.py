"""Reverse-mode gradient tape on numpy arrays.

Covers exactly the primitives the models in this package need: matmul with
broadcasting, elementwise arithmetic, relu/tanh/exp, axis reductions, masked
log-softmax, per-row gather, clip and minimum. Operations accept a mix of
``Var`` and plain arrays; with no ``Var`` argument they fall through to plain
numpy, so the same forward code serves both rollout (untaped) and training
(taped) paths.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class AutodiffError(RuntimeError):
    pass


class Tape:
    """Records primitive ops in execution order; backward replays them once
    in reverse. ``check_finite`` raises on the first non-finite adjoint,
    naming the offending op."""

    def __init__(self, check_finite: bool = False):
        self.ops: list[tuple[str, Var, Callable[[], None]]] = []
        self.check_finite = check_finite

    def var(self, value, name: str | None = None) -> "Var":
        return Var(np.asarray(value), self, name=name)

    def record(self, name: str, out: "Var", backward: Callable[[], None]) -> None:
        self.ops.append((name, out, backward))

    def backward(self, loss: "Var") -> None:
        if loss.tape is not self:
            raise AutodiffError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise AutodiffError("backward expects a scalar loss")
        if not np.all(np.isfinite(loss.value)):
            raise AutodiffError("loss is not finite")
        loss.grad = np.ones_like(loss.value)
        for op_id in range(len(self.ops) - 1, -1, -1):
            name, out, backward = self.ops[op_id]
            if out.grad is None:
                continue
            backward()
            if self.check_finite:
                for parent in _op_parents(backward):
                    if parent.grad is not None and not np.all(np.isfinite(parent.grad)):
                        raise AutodiffError(
                            f"non-finite gradient from op {name} (#{op_id})")


def _op_parents(backward) -> tuple:
    return getattr(backward, "parents", ())


class Var:
    """Array node with value and adjoint slots."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value: np.ndarray, tape: Tape, name: str | None = None):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    # Operators delegate to the module-level primitives.
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise AutodiffError("operands recorded on different tapes")
    return tape


def _accum(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        var.grad = var.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an upstream gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _record_binary(name, a, b, out_val, grad_a, grad_b):
    tape = _tape_of(a, b)
    if tape is None:
        return out_val
    out = Var(out_val, tape)

    def backward():
        g = out.grad
        if isinstance(a, Var):
            _accum(a, grad_a(g))
        if isinstance(b, Var):
            _accum(b, grad_b(g))

    backward.parents = tuple(x for x in (a, b) if isinstance(x, Var))
    tape.record(name, out, backward)
    return out


def _record_unary(name, x, out_val, grad_x):
    if not isinstance(x, Var):
        return out_val
    out = Var(out_val, x.tape)

    def backward():
        _accum(x, grad_x(out.grad))

    backward.parents = (x,)
    x.tape.record(name, out, backward)
    return out


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _record_binary("add", a, b, av + bv,
                          lambda g: _unbroadcast(g, av.shape),
                          lambda g: _unbroadcast(g, np.shape(bv)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _record_binary("sub", a, b, av - bv,
                          lambda g: _unbroadcast(g, av.shape),
                          lambda g: _unbroadcast(-g, np.shape(bv)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _record_binary("mul", a, b, av * bv,
                          lambda g: _unbroadcast(g * bv, np.shape(av)),
                          lambda g: _unbroadcast(g * av, np.shape(bv)))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise AutodiffError("matmul operands must have ndim >= 2")
    out_val = av @ bv

    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def grad_b(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _record_binary("matmul", a, b, out_val, grad_a, grad_b)


def transpose_last2(x):
    xv = value_of(x)
    return _record_unary("transpose", x, np.swapaxes(xv, -1, -2),
                         lambda g: np.swapaxes(g, -1, -2))


def reshape(x, shape):
    xv = value_of(x)
    old = xv.shape
    return _record_unary("reshape", x, xv.reshape(shape),
                         lambda g: g.reshape(old))


def relu(x):
    xv = value_of(x)
    mask = xv > 0
    return _record_unary("relu", x, np.where(mask, xv, 0.0),
                         lambda g: g * mask)


def tanh(x):
    xv = value_of(x)
    tv = np.tanh(xv)
    return _record_unary("tanh", x, tv, lambda g: g * (1.0 - tv * tv))


def exp(x):
    xv = value_of(x)
    ev = np.exp(xv)
    return _record_unary("exp", x, ev, lambda g: g * ev)


def square(x):
    xv = value_of(x)
    return _record_unary("square", x, xv * xv, lambda g: g * (2.0 * xv))


def reduce_sum(x, axis=None, keepdims: bool = False):
    xv = value_of(x)
    out_val = xv.sum(axis=axis, keepdims=keepdims)

    def grad_x(g):
        if axis is None:
            return np.broadcast_to(g, xv.shape).astype(xv.dtype, copy=False)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, xv.shape)

    return _record_unary("sum", x, out_val, grad_x)


def reduce_mean(x, axis=None, keepdims: bool = False):
    xv = value_of(x)
    count = xv.size if axis is None else np.prod(
        [xv.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def minimum(a, b):
    av, bv = value_of(a), value_of(b)
    take_a = av <= bv
    return _record_binary("minimum", a, b, np.where(take_a, av, bv),
                          lambda g: _unbroadcast(g * take_a, np.shape(av)),
                          lambda g: _unbroadcast(g * ~take_a, np.shape(bv)))


def clip(x, lo: float, hi: float):
    xv = value_of(x)
    inside = (xv > lo) & (xv < hi)
    return _record_unary("clip", x, np.clip(xv, lo, hi),
                         lambda g: g * inside)


def masked_log_softmax(x, mask: np.ndarray, axis: int = -1):
    """Log-softmax restricted to cells where mask is True; masked cells get
    -inf and contribute no gradient. Rows with no valid cell are rejected."""
    xv = value_of(x)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=axis)):
        raise AutodiffError("masked_log_softmax: a row has no valid cell")
    neg = np.array(-np.inf, dtype=xv.dtype)
    masked = np.where(mask, xv, neg)
    mx = masked.max(axis=axis, keepdims=True)
    shifted = masked - mx
    expx = np.where(mask, np.exp(shifted), 0.0)
    sumexp = expx.sum(axis=axis, keepdims=True)
    logp = np.where(mask, shifted - np.log(sumexp), neg)

    if not isinstance(x, Var):
        return logp
    softmax = expx / sumexp
    out = Var(logp, x.tape)

    def backward():
        g = np.where(mask, out.grad, 0.0)
        _accum(x, g - softmax * g.sum(axis=axis, keepdims=True))

    backward.parents = (x,)
    x.tape.record("masked_log_softmax", out, backward)
    return out


def take_per_row(x, idx: np.ndarray):
    """Gather one element per leading row: out[b] = x[b, idx[b]]."""
    xv = value_of(x)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(xv.shape[0])
    out_val = xv[rows, idx]

    def grad_x(g):
        gx = np.zeros_like(xv)
        np.add.at(gx, (rows, idx), g)
        return gx

    return _record_unary("gather", x, out_val, grad_x)


def detach(x) -> np.ndarray:
    return value_of(x).copy()


def wrap_params(tape: Tape, named: dict[str, np.ndarray]) -> dict[str, Var]:
    return {name: tape.var(arr, name=name) for name, arr in named.items()}


def grads_of(wrapped: dict[str, Var]) -> dict[str, np.ndarray]:
    return {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in wrapped.items()}
