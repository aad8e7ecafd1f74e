"""Dense float64 tensors with a reverse-mode tape.

Every differentiable operation is a registered *primitive*: a forward
function over numpy arrays that also returns a closure mapping the output
gradient to one gradient per input.  When any input requires grad (and
recording is enabled) the call is appended to the thread's active tape;
``backward`` replays that tape in reverse and consumes it.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # operator sugar; all routes go through forward_primitive
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------------------
# Tape


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class ComputationTape:
    records: list[TapeRecord] = field(default_factory=list)

    def append(self, rec: TapeRecord) -> None:
        self.records.append(rec)

    def clear(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)


class _State(threading.local):
    def __init__(self):
        self.tapes: list[ComputationTape] = [ComputationTape()]
        self.recording = True


_state = _State()


def current_tape() -> ComputationTape:
    return _state.tapes[-1]


@contextmanager
def new_tape():
    """Route recording to a fresh tape for the duration of the block."""
    tape = ComputationTape()
    _state.tapes.append(tape)
    try:
        yield tape
    finally:
        _state.tapes.pop()


@contextmanager
def no_grad():
    prev = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


# ----------------------------------------------------------------------------
# Primitive registry

PrimitiveFn = Callable[..., tuple[np.ndarray, Callable[[np.ndarray], Sequence[np.ndarray | None]]]]
PRIMITIVES: dict[str, PrimitiveFn] = {}


def primitive(name: str):
    def deco(fn: PrimitiveFn) -> PrimitiveFn:
        PRIMITIVES[name] = fn
        return fn
    return deco


def forward_primitive(op: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Evaluate primitive ``op`` and record it on the active tape if needed."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise KeyError(f"unknown primitive {op!r}") from None
    arrays = [t.data for t in inputs]
    out, back = fn(*arrays, **attrs)
    result = Tensor(out)
    if _state.recording and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.is_leaf = False
        current_tape().append(TapeRecord(op, tuple(inputs), result, back))
    return result


def backward(loss: Tensor, tape: ComputationTape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The tape is cleared afterwards, whether or not it succeeds.
    """
    if tape is None:
        tape = current_tape()
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    try:
        if not loss.requires_grad:
            return
        if loss.is_leaf:
            _accumulate_leaf(loss, np.ones_like(loss.data))
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(tape.records):
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            in_grads = rec.backward_fn(g_out)
            for t, g in zip(rec.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                if not np.isfinite(g).all():
                    raise FloatingPointError(
                        f"non-finite gradient produced by primitive {rec.op!r}")
                if t.is_leaf:
                    _accumulate_leaf(t, g)
                else:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = g if prev is None else prev + g
    finally:
        tape.clear()


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        g = np.broadcast_to(g, t.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


# ----------------------------------------------------------------------------
# Primitive definitions


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


@primitive("add")
def _add(a, b):
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return a + b, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


@primitive("sub")
def _sub(a, b):
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return a - b, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))


@primitive("mul")
def _mul(a, b):
    _broadcast_check("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@primitive("scale")
def _scale(a, c: float):
    return a * c, lambda g: (g * c,)


@primitive("add_bias")
def _add_bias(x, b):
    if b.ndim != 1 or x.ndim != 2 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    return x + b, lambda g: (g, g.sum(axis=0))


@primitive("matmul")
def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


@primitive("bmv")
def _bmv(w, x):
    # w: [m, p, q], x: [m, q] -> [m, p]
    if w.ndim != 3 or x.ndim != 2 or w.shape[0] != x.shape[0] or w.shape[2] != x.shape[1]:
        raise ShapeError(f"bmv: incompatible shapes {w.shape} and {x.shape}")
    out = np.matmul(w, x[:, :, None])[:, :, 0]
    return out, lambda g: (g[:, :, None] * x[:, None, :], np.matmul(g[:, None, :], w)[:, 0, :])


@primitive("sigmoid")
def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, lambda g: (g * out * (1.0 - out),)


@primitive("tanh")
def _tanh(x):
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


@primitive("relu")
def _relu(x):
    mask = x > 0
    return np.where(mask, x, 0.0), lambda g: (g * mask,)


@primitive("identity")
def _identity(x):
    return x.copy(), lambda g: (g,)


@primitive("abs")
def _abs(x):
    return np.abs(x), lambda g: (g * np.sign(x),)


@primitive("exp")
def _exp(x):
    out = np.exp(x)
    return out, lambda g: (g * out,)


@primitive("concat")
def _concat(*arrays, axis: int = -1):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[a.shape for a in arrays]}") from None
    splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, splits, axis=axis))


@primitive("reshape")
def _reshape(x, shape: tuple[int, ...]):
    try:
        out = x.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return out, lambda g: (g.reshape(x.shape),)


@primitive("sum")
def _sum(x, axis: int | None = None):
    out = np.sum(x, axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
    return np.asarray(out), back


@primitive("mean")
def _mean(x, axis: int | None = None):
    n = x.size if axis is None else x.shape[axis]
    out = np.mean(x, axis=axis)

    def back(g):
        if axis is None:
            return (np.full(x.shape, float(g.reshape(())) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)
    return np.asarray(out), back


@primitive("sqnorm")
def _sqnorm(x, axis: int | None = None):
    out = np.sum(x * x, axis=axis)

    def back(g):
        if axis is None:
            return (2.0 * x * g,)
        return (2.0 * x * np.expand_dims(g, axis),)
    return np.asarray(out), back


@primitive("softmax")
def _softmax(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return out, back


@primitive("log_softmax")
def _log_softmax(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)
    return out, back


@primitive("segment_softmax")
def _segment_softmax(x, segments: np.ndarray, num_segments: int):
    # softmax of a 1-D vector within each segment id
    if x.ndim != 1 or x.shape[0] != segments.shape[0]:
        raise ShapeError(f"segment_softmax: logits {x.shape} vs segments {segments.shape}")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, x)
    ez = np.exp(x - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, ez)
    out = ez / denom[segments]

    def back(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, segments, g * out)
        return (out * (g - dot[segments]),)
    return out, back


@primitive("gather_rows")
def _gather_rows(x, index: np.ndarray):
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def back(g):
        out = np.zeros_like(x)
        np.add.at(out, index, g)
        return (out,)
    return x[index], back


@primitive("scatter_add_rows")
def _scatter_add_rows(x, index: np.ndarray, num_rows: int):
    if x.shape[0] != index.shape[0]:
        raise ShapeError(f"scatter_add_rows: {x.shape[0]} rows vs {index.shape[0]} targets")
    out = np.zeros((num_rows,) + x.shape[1:])
    np.add.at(out, index, x)
    return out, lambda g: (g[index],)


@primitive("pick")
def _pick(x, index: np.ndarray):
    # out[i] = x[i, index[i]]
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: shapes {x.shape} and {index.shape}")
    rows = np.arange(x.shape[0])

    def back(g):
        out = np.zeros_like(x)
        out[rows, index] = g
        return (out,)
    return x[rows, index], back


# ----------------------------------------------------------------------------
# Functional wrappers


def add(a, b): return forward_primitive("add", [a, b])
def sub(a, b): return forward_primitive("sub", [a, b])
def mul(a, b): return forward_primitive("mul", [a, b])
def scale(a, c: float): return forward_primitive("scale", [a], c=float(c))
def add_bias(x, b): return forward_primitive("add_bias", [x, b])
def matmul(a, b): return forward_primitive("matmul", [a, b])
def bmv(w, x): return forward_primitive("bmv", [w, x])
def sigmoid(x): return forward_primitive("sigmoid", [x])
def tanh(x): return forward_primitive("tanh", [x])
def relu(x): return forward_primitive("relu", [x])
def identity(x): return forward_primitive("identity", [x])
def abs_(x): return forward_primitive("abs", [x])
def exp(x): return forward_primitive("exp", [x])
def concat(ts, axis=-1): return forward_primitive("concat", list(ts), axis=axis)
def reshape(x, shape): return forward_primitive("reshape", [x], shape=tuple(shape))
def sum_(x, axis=None): return forward_primitive("sum", [x], axis=axis)
def mean(x, axis=None): return forward_primitive("mean", [x], axis=axis)
def sqnorm(x, axis=None): return forward_primitive("sqnorm", [x], axis=axis)
def softmax(x, axis=-1): return forward_primitive("softmax", [x], axis=axis)
def log_softmax(x, axis=-1): return forward_primitive("log_softmax", [x], axis=axis)
def pick(x, index): return forward_primitive("pick", [x], index=np.asarray(index, dtype=np.int64))


def segment_softmax(x, segments, num_segments: int):
    return forward_primitive("segment_softmax", [x],
                             segments=np.asarray(segments, dtype=np.int64),
                             num_segments=int(num_segments))


def gather_rows(x, index):
    return forward_primitive("gather_rows", [x], index=np.asarray(index, dtype=np.int64))


def scatter_add_rows(x, index, num_rows: int):
    return forward_primitive("scatter_add_rows", [x],
                             index=np.asarray(index, dtype=np.int64), num_rows=int(num_rows))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add_bias(out, bias)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "linear": lambda x: x,
}
