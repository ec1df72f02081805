"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array together with an optional gradient
accumulator.  Operations executed while a :class:`Tape` is active are
recorded in execution order (which is already a topological order), and
:func:`backward` replays the records in reverse to accumulate gradients
into every tensor that has ``requires_grad`` set.

The op set is deliberately small: exactly the primitives the forecasting
model needs (matmul, broadcast arithmetic, concat, softmax, exact GELU,
sigmoid, layer norm, inverted dropout, reductions).  All math is done by
numpy; float64 is the default dtype, float32 can be selected globally via
:func:`set_default_dtype` for cheaper training runs.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy import special

from .errors import ConfigError, NumericsError, ShapeError

LAYER_NORM_EPS = 1e-5

_DEFAULT_DTYPE = np.float64
_DEBUG_FINITE = False
_FLOAT_DTYPES = (np.float32, np.float64)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype).type
    if dt not in _FLOAT_DTYPES:
        raise ConfigError(f"unsupported tensor dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def default_dtype():
    return _DEFAULT_DTYPE


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finite checks (slow; meant for tests and debugging)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype.type in _FLOAT_DTYPES:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; scalars become constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


class Tape:
    """Ordered record of executed primitives; one backward pass each.

    Use as a context manager around the forward computation.  Tapes nest
    (inner tape records while active) and are thread-local, so concurrent
    workers each need their own tape.
    """

    __slots__ = ("_records", "_consumed")

    def __init__(self):
        self._records: list = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted"

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into every tracked leaf tensor."""
        if self._consumed:
            raise ConfigError("tape already consumed by a previous backward pass")
        if loss.size != 1:
            raise ConfigError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ConfigError("loss is not connected to any tensor that requires grad")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, grad_fn in reversed(self._records):
            if out.grad is not None:
                grad_fn(out.grad)


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor) -> None:
    """Run the active tape's backward pass from a scalar loss."""
    tape = active_tape()
    if tape is None:
        raise ConfigError("backward called with no active tape")
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _output(data: np.ndarray, inputs: tuple, grad_fn) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError("non-finite value produced by a forward op")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append((out, grad_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _output(data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _output(data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _output(data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _output(-a.data, (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-d classic or 3-d batched (matching batch dims)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    elif a.ndim == b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"batched matmul shapes disagree: {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul supports 2-d or 3-d operands of equal rank, got {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(a.data.swapaxes(-1, -2), g))

    return _output(data, (a, b), grad_fn)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _output(np.transpose(a.data, axes), (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _output(a.data.reshape(shape), (a,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return _output(data, tuple(tensors), grad_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_spread(g, a.shape, axis, keepdims))

    return _output(data, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in _norm_axes(axis, a.ndim)])
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(_spread(g, a.shape, axis, keepdims) / count)

    return _output(data, (a,), grad_fn)


def _norm_axes(axis, ndim) -> tuple:
    axes = axis if isinstance(axis, tuple) else (axis,)
    return tuple(ax % ndim for ax in axes)


def _spread(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduced gradient back over the reduced axes."""
    if axis is not None and not keepdims:
        for ax in sorted(_norm_axes(axis, len(shape))):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - inner))

    return _output(y, (a,), grad_fn)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU, x * Phi(x) (erf form, no tanh approximation)."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))

    def grad_fn(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            a._accumulate(g * (cdf + x * pdf))

    return _output(x * cdf, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    s = special.expit(a.data)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * s * (1.0 - s))

    return _output(s, (a,), grad_fn)


def absval(a: Tensor) -> Tensor:
    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _output(np.abs(a.data), (a,), grad_fn)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, axis: int = 0) -> Tensor:
    """Normalize each slice along ``axis`` to zero mean / unit variance, then affine.

    ``gain`` and ``bias`` must broadcast against ``a`` (for a (D, N) input
    normalized over axis 0 they are (D, 1) columns).  Variance gets
    ``LAYER_NORM_EPS`` added before the square root.
    """
    gain, bias = _as_tensor(gain), _as_tensor(bias)
    m = a.shape[axis]
    if m < 2:
        raise ConfigError(f"layer_norm axis extent must be >= 2, got {m}")
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv
    data = gain.data * xhat + bias.data

    def grad_fn(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if a.requires_grad:
            dxhat = g * gain.data
            term = dxhat.sum(axis=axis, keepdims=True) + xhat * (dxhat * xhat).sum(axis=axis, keepdims=True)
            a._accumulate(inv * (dxhat - term / m))

    return _output(data, (a, gain, bias), grad_fn)


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate).

    Inference (``training=False``) is an exact identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout in training mode needs an explicit rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _output(a.data * keep, (a,), grad_fn)
