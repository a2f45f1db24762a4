"""Minimal reverse-mode autodiff on dense float64 numpy arrays.

Operations record themselves on an explicit tape (define-by-run: a fresh
tape per forward pass) and `backward` replays the tape in reverse, pushing
gradients through each recorded rule.  Everything is 64-bit; there is no
other dtype.

Usage:

    with Tape():
        y = mul(x, x)
        loss = sum_(y)
        backward(loss)
    # x.grad now holds d(loss)/dx

Outside a `with Tape()` block the same ops run without recording, which is
the inference path.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

_node_ids = itertools.count()
_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array plus autodiff bookkeeping.

    `grad` is populated by `backward` and has the same shape as `data`.
    `node_id` identifies the tensor on the tape that recorded it.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # ascontiguousarray would promote 0-d to 1-d
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward  # (grad_out: ndarray) -> sequence of grads per input


class Tape:
    """Ordered record of one forward pass.

    Records are appended in execution order, so by construction every
    operation's inputs were recorded before it; reverse iteration is a
    valid topological order for backprop.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.records)


def _apply(inputs: Sequence[Tensor], out_data: np.ndarray,
           backward_rule: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Create the output tensor and record the op if a tape is active."""
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.records.append(_Record(out, tuple(inputs), backward_rule))
    return out


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad tensor reachable from `loss`.

    `loss` must be a scalar recorded on the active tape.  Gradients
    accumulate additively across fan-out, and accumulate into any existing
    `.grad` buffers (clear them between steps).
    """
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() requires an active Tape")
    if loss.data.shape != ():
        raise ValueError(f"backward() expects a scalar loss, got shape {loss.data.shape}")

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=np.float64)}
    seen: dict[int, Tensor] = {loss.node_id: loss}
    done: set[int] = set()
    for rec in reversed(tape.records):
        nid = rec.output.node_id
        if nid in done:  # outputs are unique on a well-formed tape; guard anyway
            continue
        g_out = grads.get(nid)
        if g_out is None:
            continue  # not reachable from loss
        done.add(nid)
        seen[nid] = rec.output
        in_grads = rec.backward(g_out)
        for t, g in zip(rec.inputs, in_grads):
            if g is None:
                continue
            seen[t.node_id] = t
            acc = grads.get(t.node_id)
            grads[t.node_id] = g if acc is None else acc + g

    for nid, t in seen.items():
        if not t.requires_grad:
            continue
        g = grads.get(nid)
        if g is None:
            continue
        if g.shape != t.data.shape:
            g = np.broadcast_to(g, t.data.shape)
        # grads are never mutated in place downstream, so sharing is safe
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and affine ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    out = a.data + b.data
    return _apply((a, b), out, lambda g: (_unbroadcast(g, a.data.shape),
                                          _unbroadcast(g, b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return _apply((a,), -a.data, lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    out = a.data * b.data
    ad, bd = a.data, b.data
    return _apply((a, b), out, lambda g: (_unbroadcast(g * bd, ad.shape),
                                          _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    s = float(s)
    return _apply((a,), a.data * s, lambda g: (g * s,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _apply((a,), t, lambda g: (g * (1.0 - t * t),))


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU. Odd-symmetric core: gelu(x) - gelu(-x) == x exactly."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _apply((a,), out, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Contract the last axis of `a` with a 2-D weight `b`: (..., k) @ (k, m)."""
    if b.ndim != 2:
        raise ValueError(f"matmul weight must be 2-D, got shape {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def back(g):
        ga = g @ bd.T
        k, m = bd.shape
        gb = ad.reshape(-1, k).T @ g.reshape(-1, m)
        return (ga.reshape(ad.shape), gb)

    return _apply((a, b), out, back)


def gather(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding): table [V, D], integer ids of any shape -> [*ids, D]."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("gather ids must be integers")
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise ValueError(f"gather id out of range [0, {v})")
    out = table.data[ids]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _apply((table,), out, back)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.data.shape
    return _apply((a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def moveaxis(a: Tensor, source: int, destination: int) -> Tensor:
    out = np.moveaxis(a.data, source, destination)
    return _apply((a,), np.ascontiguousarray(out),
                  lambda g: (np.moveaxis(g, destination, source),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat needs at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _apply(parts, out, back)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    n = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > n:
        raise ValueError(f"narrow [{start}:{start + length}] out of range for axis size {n}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def back(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return (ga,)

    return _apply((a,), np.ascontiguousarray(out), back)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis: int | tuple[int, ...] | None = None,
         keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.data.shape),)

    return _apply((a,), out, back)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None,
         keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    s = sum_(a, axis=axis, keepdims=keepdims)
    return scale(s, 1.0 / float(count))


# ---------------------------------------------------------------------------
# sequence resampling (last axis)
# ---------------------------------------------------------------------------

def avg_pool2(a: Tensor) -> Tensor:
    """Average neighbouring pairs along the last axis (stride-2 pooling)."""
    n = a.data.shape[-1]
    if n < 2 or n % 2 != 0:
        raise ValueError(f"avg_pool2 needs an even last axis, got {n}")
    out = 0.5 * (a.data[..., 0::2] + a.data[..., 1::2])

    def back(g):
        return (0.5 * np.repeat(g, 2, axis=-1),)

    return _apply((a,), out, back)


def upsample_nearest2(a: Tensor) -> Tensor:
    """Repeat every position twice along the last axis."""
    out = np.repeat(a.data, 2, axis=-1)

    def back(g):
        return (g[..., 0::2] + g[..., 1::2],)

    return _apply((a,), out, back)
