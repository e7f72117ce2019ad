"""Dense 2-D float64 tensors with a reverse-mode gradient tape.

Usage::

    with Tape() as tape:
        y = (x @ w + b).tanh().sum()
    gx, gw = tape.gradient(y, [x, w])

An op is recorded when a tape is active and at least one input is being
tracked (a leaf with ``requires_grad`` or the output of a recorded op).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        elif data.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {data.shape}")
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __matmul__(self, other): return matmul(self, other)
    def __neg__(self): return scale(self, -1.0)

    def tanh(self): return tanh(self)
    def sigmoid(self): return sigmoid(self)
    def exp(self): return exp(self)
    def sum(self): return sum_all(self)


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_active: list["Tape"] = []


class Tape:
    """Ordered op records; ``gradient`` walks them once in reverse."""

    def __init__(self):
        self.records: list[Record] = []
        self._tracked: set[int] = set()
        self._watched: list[Tensor] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def watch(self, *tensors: Tensor):
        for t in tensors:
            self._watched.append(t)
            self._tracked.add(id(t))

    def is_tracked(self, t) -> bool:
        return isinstance(t, Tensor) and (t.requires_grad or id(t) in self._tracked)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        if target.data.size != 1:
            raise ShapeError("gradient target must be a scalar tensor")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not self.is_tracked(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def no_tape_active() -> bool:
    return not _active


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: tuple, data: np.ndarray, backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    if _active:
        tape = _active[-1]
        if any(tape.is_tracked(t) for t in inputs):
            tape.records.append(Record(op, inputs, out, backward))
            tape._tracked.add(id(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op, a: Tensor, b: Tensor):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


elementwise_mul = mul


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("square", (a,), ad * ad, lambda g: (2.0 * g * ad,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clip", (a,), np.clip(a.data, lo, hi), lambda g: (g * inside,))


# ----------------------------------------------------------------------------
# reductions and structure
# ----------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), a.data.sum().reshape(1, 1),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_rows(a: Tensor) -> Tensor:
    """Sum over columns: (B, n) -> (B, 1)."""
    n = a.shape[1]
    return _emit("sum_rows", (a,), a.data.sum(axis=1, keepdims=True),
                 lambda g: (np.repeat(g, n, axis=1),))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    other = 1 - axis
    if len({t.shape[other] for t in ts}) != 1:
        raise ShapeError(f"concat: mismatched shapes {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        if axis == 1:
            return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts))]
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(ts))]

    return _emit("concat", ts, np.concatenate([t.data for t in ts], axis=axis), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _emit("slice", (a,), a.data[:, start:stop], backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit("slice_rows", (a,), a.data[start:stop], backward)


# ----------------------------------------------------------------------------
# fused layer ops
# ----------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias, with weight shaped (out, in)."""
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is None:
        return _emit("linear", (x, weight), out, lambda g: (g @ wd, g.T @ xd))
    out += bias.data
    return _emit("linear", (x, weight, bias), out,
                 lambda g: (g @ wd, g.T @ xd, g.sum(axis=0, keepdims=True)))


def gru(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """One GRU step, gates stacked [reset, update, candidate].

    r = s(W_r x + U_r h + b_r); z = s(W_z x + U_z h + b_z)
    n = tanh(W_n x + U_n (r * h) + b_n); h' = z * h + (1 - z) * n
    """
    H = h.shape[1]
    if w_ih.shape != (3 * H, x.shape[1]) or w_hh.shape != (3 * H, H) or bias.shape != (1, 3 * H):
        raise ShapeError("gru: parameter shapes do not match input/hidden sizes")
    if x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru: batch mismatch {x.shape} vs {h.shape}")
    xd, hd, W, U, b = x.data, h.data, w_ih.data, w_hh.data, bias.data
    gx = xd @ W.T + b
    gh = hd @ U[:2 * H].T
    r = _sigmoid(gx[:, :H] + gh[:, :H])
    z = _sigmoid(gx[:, H:2 * H] + gh[:, H:])
    rh = r * hd
    n = np.tanh(gx[:, 2 * H:] + rh @ U[2 * H:].T)
    out = z * hd + (1.0 - z) * n

    def backward(g):
        dz = g * (hd - n) * z * (1.0 - z)
        dn = g * (1.0 - z) * (1.0 - n * n)
        drh = dn @ U[2 * H:]
        dr = drh * hd * r * (1.0 - r)
        dgx = np.concatenate([dr, dz, dn], axis=1)
        dh = g * z + drh * r + np.concatenate([dr, dz], axis=1) @ U[:2 * H]
        dU = np.concatenate([np.concatenate([dr, dz], axis=1).T @ hd, dn.T @ rh], axis=0)
        return dgx @ W, dh, dgx.T @ xd, dU, dgx.sum(axis=0, keepdims=True)

    return _emit("gru", (x, h, w_ih, w_hh, bias), out, backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over rows; ``labels`` are class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    B = logits.shape[0]
    if labels.shape != (B,):
        raise ShapeError("cross_entropy: one label per row")
    p = softmax(logits.data)
    loss = -np.log(np.maximum(p[np.arange(B), labels], 1e-300)).mean()

    def backward(g):
        d = p.copy()
        d[np.arange(B), labels] -= 1.0
        return (g * d / B,)

    return _emit("cross_entropy", (logits,), np.array([[loss]]), backward)


def custom(op: str, inputs: tuple, data: np.ndarray, backward) -> Tensor:
    """Record an op whose backward is supplied by the caller."""
    return _emit(op, tuple(_as_tensor(t) for t in inputs), data, backward)
