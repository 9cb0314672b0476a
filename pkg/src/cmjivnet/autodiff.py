"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray; while a ``Tape`` is active, every primitive
records the inputs it needs for its backward rule. ``backward`` replays the
tape in reverse and returns gradients for the leaf tensors that were marked
``requires_grad``. float32 is the working precision; building a graph from
float64 tensors keeps everything in float64, which is what the finite
difference checks use.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class GraphError(RuntimeError):
    """Raised on misuse of the tape (e.g. backward from a non-scalar)."""


_active_tape = None
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every primitive (slow; for debugging)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """Immutable dense array value participating in the autodiff graph.

    Only leaf tensors created with ``requires_grad=True`` receive gradients;
    intermediate results are tracked through the active tape.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def assert_finite(self, label: str = "tensor") -> None:
        if not np.isfinite(self.data).all():
            raise FloatingPointError(f"{label} contains NaN or Inf")

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{grad})"

    # arithmetic sugar -----------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Tape:
    """Ordered record of primitive applications for one forward evaluation.

    Used as a context manager; primitives executed inside record themselves
    when any input participates in gradient flow. Replaying the records in
    reverse visits every node exactly once.
    """

    def __init__(self):
        self._records = []          # (out, inputs, backward_fn)
        self._tracked = set()       # ids of non-leaf tensors needing grad flow

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise GraphError("nested tapes are not supported")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_tape
        _active_tape = None

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked


def _finalize(out: Tensor, inputs, backward_fn) -> Tensor:
    """Register an op result on the active tape if gradients must flow."""
    if _debug_checks and not np.isfinite(out.data).all():
        raise FloatingPointError("op produced NaN or Inf")
    tape = _active_tape
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._records.append((out, inputs, backward_fn))
        tape._tracked.add(id(out))
    return out


def backward(tape: Tape, loss: Tensor, params=None):
    """Propagate d(loss)/d(leaf) through the tape.

    Returns a dict keyed by leaf Tensor (identity). If ``params`` (an
    iterable of tensors) is given, every listed tensor gets an entry,
    zero-filled when the loss does not depend on it.
    """
    if loss.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for out, inputs, backward_fn in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not tape._tracks(t):
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if t.requires_grad:
                leaves[key] = t
    result = {t: grads[key] for key, t in leaves.items()}
    if params is not None:
        for p in params:
            if p not in result:
                result[p] = np.zeros_like(p.data)
    return result


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _match_constant(x, ref: Tensor) -> Tensor:
    """Wrap a scalar/array constant using the dtype of a reference tensor."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient over broadcast axes back to the operand shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise binary primitives


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _match_constant(a, b)
    b = b if isinstance(b, Tensor) else _match_constant(b, a)
    out = Tensor(a.data + b.data)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finalize(out, (a, b), back)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _match_constant(a, b)
    b = b if isinstance(b, Tensor) else _match_constant(b, a)
    out = Tensor(a.data - b.data)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _finalize(out, (a, b), back)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _match_constant(a, b)
    b = b if isinstance(b, Tensor) else _match_constant(b, a)
    out = Tensor(a.data * b.data)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finalize(out, (a, b), back)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _match_constant(a, b)
    b = b if isinstance(b, Tensor) else _match_constant(b, a)
    out = Tensor(a.data / b.data)

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _finalize(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {tuple(a.shape)} vs {tuple(b.shape)}")
    out = Tensor(np.matmul(a.data, b.data))

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _finalize(out, (a, b), back)


# ---------------------------------------------------------------------------
# elementwise unary primitives


def neg(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _finalize(Tensor(-x.data), (x,), lambda g: (-g,))


def power(x: Tensor, exponent: float) -> Tensor:
    x = as_tensor(x)
    p = float(exponent)
    out = Tensor(x.data ** p)

    def back(g):
        return (g * p * x.data ** (p - 1.0),)

    return _finalize(out, (x,), back)


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data * x.data)
    return _finalize(out, (x,), lambda g: (g * (2.0 * x.data),))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    return _finalize(out, (x,), lambda g: (g * out.data,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))
    return _finalize(out, (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sqrt(x.data))
    return _finalize(out, (x,), lambda g: (g * (0.5 / out.data),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))
    return _finalize(out, (x,), lambda g: (g * (x.data > 0),))


def _sigmoid(arr: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(arr))
    return np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = Tensor(s)
    return _finalize(out, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)
    return _finalize(out, (x,), lambda g: (g * (1.0 - t * t),))


def softplus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.logaddexp(np.asarray(0, dtype=x.dtype), x.data))
    return _finalize(out, (x,), lambda g: (g * _sigmoid(x.data),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient is zero outside [lo, hi]."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi))
    mask = (x.data >= lo) & (x.data <= hi)
    return _finalize(out, (x,), lambda g: (g * mask,))


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# reductions


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, [a % x.ndim for a in axes])
        return (np.broadcast_to(g, x.shape),)

    return _finalize(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod(
        [x.shape[a % x.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def squared_difference(a, b) -> Tensor:
    """Elementwise (a - b)^2."""
    return square(sub(a, b))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is a constant w.r.t. grad."""
    x = as_tensor(x)
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = exp(sub(x, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_with_corrected_grad(x: Tensor, denominator: float) -> Tensor:
    """log(x) whose backward uses a fixed denominator instead of x.

    Supports moving-average bias correction for Donsker-Varadhan critics:
    the forward value is the exact log, the gradient is g / denominator.
    """
    x = as_tensor(x)
    d = float(denominator)
    out = Tensor(np.log(x.data))
    return _finalize(out, (x,), lambda g: (g / d,))


# ---------------------------------------------------------------------------
# movement / indexing


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _finalize(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _finalize(out, (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        grads = []
        for i, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _finalize(out, tuple(tensors), back)


def split(x: Tensor, sections: int, axis: int = -1):
    """Split into equal-size parts along an axis (inverse of concat)."""
    x = as_tensor(x)
    n = x.shape[axis]
    if n % sections != 0:
        raise ShapeError(f"split: axis size {n} not divisible into {sections} parts")
    step = n // sections
    ax = axis % x.ndim
    parts = []
    for i in range(sections):
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(i * step, (i + 1) * step)
        parts.append(getitem(x, tuple(sl)))
    return parts


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data[idx])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return _finalize(out, (x,), back)


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index array."""
    x = as_tensor(x)
    indices = np.asarray(indices)
    out = Tensor(np.take(x.data, indices, axis=axis))
    ax = axis % x.ndim

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None),) * ax + (indices,), g)
        return (gx,)

    return _finalize(out, (x,), back)


def sym_from_edges(edges: Tensor, v: int) -> Tensor:
    """Place (B, D) lower-triangle edge values into symmetric (B, V, V) matrices."""
    edges = as_tensor(edges)
    iu, iv = np.tril_indices(v, k=-1)
    b, d = edges.shape
    if d != v * (v - 1) // 2:
        raise ShapeError(f"sym_from_edges: got {d} edges for V={v}, expected {v * (v - 1) // 2}")
    lo = (iu * v + iv).astype(np.intp)
    hi = (iv * v + iu).astype(np.intp)
    flat = np.zeros((b, v * v), dtype=edges.dtype)
    flat[:, lo] = edges.data
    flat[:, hi] = edges.data
    out = Tensor(flat.reshape(b, v, v))

    def back(g):
        gf = g.reshape(b, v * v)
        return (gf[:, lo] + gf[:, hi],)

    return _finalize(out, (edges,), back)


# ---------------------------------------------------------------------------
# spatial primitives


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * k * k, ho * wo)
    return cols, (ho, wo)


def _col2im(cols: np.ndarray, out_shape, k: int, stride: int, pad: int, grid):
    b, c, h, w = out_shape
    gh, gw = grid
    acc = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, k, k, gh, gw)
    for i in range(k):
        for j in range(k):
            acc[:, :, i:i + stride * gh:stride, j:j + stride * gw:stride] += cols6[:, :, i, j]
    if pad:
        acc = acc[:, :, pad:h + pad, pad:w + pad]
    return acc


def conv2d(x: Tensor, w: Tensor, b: Tensor = None, stride: int = 1, padding: int = 1) -> Tensor:
    """2-d convolution; weight layout (C_out, C_in, kH, kW)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch, input {tuple(x.shape)} vs weight {tuple(w.shape)}")
    n, _, _, _ = x.shape
    c_out, _, k, _ = w.shape
    cols, (ho, wo) = _im2col(x.data, k, stride, padding)
    w2 = w.data.reshape(c_out, -1)
    y = np.matmul(w2, cols).reshape(n, c_out, ho, wo)
    if b is not None:
        y = y + b.data.reshape(1, c_out, 1, 1)
    out = Tensor(y)

    def back(g):
        g2 = g.reshape(n, c_out, ho * wo)
        dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        dcols = np.matmul(w2.T, g2)
        dx = _col2im(dcols, x.shape, k, stride, padding, (ho, wo))
        db = None if b is None else g.sum(axis=(0, 2, 3))
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return _finalize(out, inputs, back)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor = None, stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed 2-d convolution; weight layout (C_in, C_out, kH, kW).

    With kernel 4 / stride 2 / padding 1 the spatial size exactly doubles.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: channel mismatch, input {tuple(x.shape)} vs weight {tuple(w.shape)}")
    n, c_in, h, wd = x.shape
    _, c_out, k, _ = w.shape
    ho = (h - 1) * stride - 2 * padding + k
    wo = (wd - 1) * stride - 2 * padding + k
    w2 = w.data.reshape(c_in, -1)
    x2 = x.data.reshape(n, c_in, h * wd)
    cols = np.matmul(w2.T, x2)
    y = _col2im(cols, (n, c_out, ho, wo), k, stride, padding, (h, wd))
    if b is not None:
        y = y + b.data.reshape(1, c_out, 1, 1)
    out = Tensor(y)

    def back(g):
        gcols, _ = _im2col(g[:, :c_out], k, stride, padding)
        dx = np.matmul(w2, gcols).reshape(x.shape)
        dw = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        db = None if b is None else g.sum(axis=(0, 2, 3))
        return (dx, dw) if b is None else (dx, dw, db)

    inputs = (x, w) if b is None else (x, w, b)
    return _finalize(out, inputs, back)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols beyond a multiple of
    ``size`` are dropped (floor division of the spatial dims)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    xt = x.data[:, :, :ho * size, :wo * size]
    windows = xt.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    windows = np.ascontiguousarray(windows).reshape(n, c, ho, wo, size * size)
    idx = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])

    def back(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx_core = gw.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        gx_core = gx_core.reshape(n, c, ho * size, wo * size)
        if ho * size == h and wo * size == w:
            return (gx_core,)
        gx = np.zeros_like(x.data)
        gx[:, :, :ho * size, :wo * size] = gx_core
        return (gx,)

    return _finalize(out, (x,), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with w of shape (d_in, d_out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: input {tuple(x.shape)} incompatible with weight {tuple(w.shape)}")
    return add(matmul(x, w), b)
