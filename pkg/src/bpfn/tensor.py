"""Dense arrays with a reverse-mode gradient tape.

A ``Tensor`` wraps a numpy array and is treated as immutable once
created.  Operations compute eagerly with numpy; when a ``GradTape`` is
active and an operand is connected to a trainable leaf, the op also
records a node so ``tape.backward(loss)`` can replay the tape in exact
reverse order and accumulate adjoints.

Default precision is float32.  Gradient tests switch to float64 with
``using_dtype("float64")`` because float32 is too noisy for central
finite differences.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from . import rng

_FLOAT_DTYPES = (np.float32, np.float64)
_INV_SQRT_2PI = 0.3989422804014327

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {rendered}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.float32)


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype).type
    if dt not in _FLOAT_DTYPES:
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _state.dtype = dt


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default precision (e.g. "float64" for tests)."""
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """Immutable dense array, optionally a trainable leaf of the tape."""

    __slots__ = ("data", "trainable", "name")

    def __init__(self, data, trainable: bool = False, name: Optional[str] = None,
                 dtype=None):
        # numpy float arrays keep their precision; everything else
        # (lists, scalars, int arrays) takes the session default
        keep = isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_DTYPES
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep:
            arr = arr.astype(get_default_dtype())
        self.data = arr
        self.trainable = trainable
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; constants are coerced to this tensor's dtype
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)


TensorLike = Union[Tensor, np.ndarray, float, int]


class GradTape:
    """Ordered record of primitive ops for one training step.

    The backward pass walks the records in exact reverse of recording
    order; adjoints accumulate per node in that fixed order, so
    gradients are deterministic for a given forward program.
    """

    def __init__(self):
        # records hold the output tensor itself so object ids stay unique
        # for the lifetime of the tape
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._tracked: set[int] = set()
        self._tensors: dict[int, Tensor] = {}

    def __enter__(self) -> "GradTape":
        if getattr(_state, "tape", None) is not None:
            raise RuntimeError("a GradTape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def __len__(self) -> int:
        return len(self._records)

    def _tracks(self, t: Tensor) -> bool:
        return t.trainable or id(t) in self._tracked

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...],
                backward_fn: Callable) -> None:
        self._records.append((out, inputs, backward_fn))
        self._tracked.add(id(out))
        for t in inputs:
            if t.trainable:
                self._tensors[id(t)] = t

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Adjoints of ``loss`` with respect to every trainable leaf.

        ``loss`` must be a scalar produced under this tape.
        """
        if loss.data.shape != ():
            raise ShapeError("backward", loss.shape, (),
                             detail="loss must be scalar")
        if not self._records:
            raise RuntimeError("backward called on an empty tape")
        adjoints: dict[int, np.ndarray] = {
            id(loss): np.ones((), dtype=loss.data.dtype)
        }
        for out, inputs, backward_fn in reversed(self._records):
            out_adj = adjoints.get(id(out))
            if out_adj is None:
                continue
            for t, grad in zip(inputs, backward_fn(out_adj)):
                if grad is None or not self._tracks(t):
                    continue
                slot = adjoints.get(id(t))
                if slot is None:
                    adjoints[id(t)] = np.ascontiguousarray(grad)
                else:
                    adjoints[id(t)] = slot + grad
        return {
            tensor: adjoints[tid]
            for tid, tensor in self._tensors.items()
            if tid in adjoints
        }


def _active_tape() -> Optional[GradTape]:
    return getattr(_state, "tape", None)


def _coerce(x: TensorLike, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a: TensorLike, b: TensorLike) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _coerce(b, a.dtype)
    if isinstance(b, Tensor):
        return _coerce(a, b.dtype), b
    dt = get_default_dtype()
    return _coerce(a, dt), _coerce(b, dt)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...],
          backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise / linear algebra primitives
# ---------------------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _emit(a.data * b.data, (a, b), backward)


def neg(a: TensorLike) -> Tensor:
    a = _coerce(a, get_default_dtype())
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape,
                         detail="operands must have >= 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape,
                         detail="inner dimensions differ")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(a.data @ b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x), with Phi the standard normal CDF."""
    cdf = ndtr(x.data).astype(x.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _emit(x.data * cdf, (x,), backward)


def sin(x: Tensor) -> Tensor:
    return _emit(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x: Tensor) -> Tensor:
    return _emit(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax over the named axis."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return _emit(p, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - logz

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (x,), backward)


def dropout(x: Tensor, rate: float, key: int) -> Tensor:
    """Inverted dropout with a mask drawn from the counter RNG at ``key``.

    Callers derive ``key`` from (global seed, layer id, step) so masks are
    reproducible independent of scheduling.  rate=0 returns ``x`` itself.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.uniform(key, x.shape) >= rate).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep * scale
    return _emit(x.data * mask, (x,), lambda g: (g * mask,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        gg = g * gain.data
        # d/dx of (x - mu) / sigma with mu, sigma functions of x
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _emit(xhat * gain.data + bias.data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# shape and reduction primitives
# ---------------------------------------------------------------------------

def tsum(x: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape),)

    return _emit(x.data.sum(axis=axis), (x,), backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]

    def backward(g):
        scaled = g / count
        if axis is None:
            return (np.broadcast_to(scaled, x.shape).astype(x.dtype, copy=False),)
        return (np.broadcast_to(np.expand_dims(scaled, axis), x.shape),)

    return _emit(x.data.mean(axis=axis), (x,), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    return _emit(x.data.reshape(shape), (x,),
                 lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inverse),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        buf = np.zeros(x.shape, dtype=g.dtype)
        buf[index] = g
        return (buf,)

    return _emit(np.ascontiguousarray(x.data[index]), (x,), backward)


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, bounds, axis=axis))

    return _emit(np.concatenate([p.data for p in parts], axis=axis),
                 tuple(parts), backward)


def take_along_last(x: Tensor, index: np.ndarray) -> Tensor:
    """out[...] = x[..., index[...]]; one element picked per row."""
    index = np.asarray(index)
    if index.shape != x.shape[:-1]:
        raise ShapeError("take_along_last", x.shape, index.shape,
                         detail="index must match all but the last axis")
    idx = index[..., None]

    def backward(g):
        buf = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(buf, idx, g[..., None], axis=-1)
        return (buf,)

    return _emit(np.take_along_axis(x.data, idx, axis=-1)[..., 0], (x,),
                 backward)


def mask_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Keep entries where ``mask`` is True, set the rest to ``value``.

    Gradient flows only through kept entries, so masked positions are
    exactly zero in the backward pass.
    """
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, x.data, np.asarray(value, dtype=x.dtype))
    return _emit(data, (x,), lambda g: (np.where(mask, g, 0),))


def global_grad_norm(grads: dict) -> float:
    """L2 norm over a gradient map, accumulated in sorted-name order."""
    total = 0.0
    for key in sorted(grads, key=_grad_key):
        g = grads[key]
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def _grad_key(k) -> str:
    return k if isinstance(k, str) else (k.name or str(id(k)))


__all__ = [
    "GradTape",
    "ShapeError",
    "Tensor",
    "add",
    "concat",
    "cos",
    "dropout",
    "gelu",
    "get_default_dtype",
    "global_grad_norm",
    "layer_norm",
    "log_softmax",
    "mask_fill",
    "matmul",
    "mul",
    "narrow",
    "neg",
    "relu",
    "reshape",
    "set_default_dtype",
    "sin",
    "softmax",
    "sub",
    "take_along_last",
    "tmean",
    "transpose",
    "tsum",
    "using_dtype",
]
