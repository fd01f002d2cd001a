"""Differentiable operations over :class:`~cannet.neural_core.tensor.Tensor`.

Each function validates its preconditions, computes the forward value (conv
and pooling through the selected kernel backend), and registers a
vector-Jacobian closure on the active tape.  Binary elementwise ops follow
numpy broadcasting; their backward rules sum gradients back down to each
input's shape.

Subgradient conventions, fixed here once: relu picks 0 at the kink, sqrt
picks 0 at 0, max-style selections (pooling, elementwise maximum, the
per-sample max reduction) route gradient to the first winner in row-major
order on ties, and the clamped log treats the clamped region as constant.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, ShapeError
from . import kernels as K
from .tensor import Tensor, apply_op, as_tensor

_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(ax for ax, s in enumerate(shape) if s == 1 and g.shape[ax] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(name, a, b, out_values, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return (
            _unbroadcast(da(g, a.values, b.values), a.values.shape),
            _unbroadcast(db(g, a.values, b.values), b.values.shape),
        )

    return apply_op(name, (a, b), out_values, bwd)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary("add", a, b, a.values + b.values, lambda g, av, bv: g, lambda g, av, bv: g)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary("sub", a, b, a.values - b.values, lambda g, av, bv: g, lambda g, av, bv: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        "mul", a, b, a.values * b.values, lambda g, av, bv: g * bv, lambda g, av, bv: g * av
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        "div",
        a,
        b,
        a.values / b.values,
        lambda g, av, bv: g / bv,
        lambda g, av, bv: -g * av / (bv * bv),
    )


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        "maximum",
        a,
        b,
        np.maximum(a.values, b.values),
        lambda g, av, bv: g * (av >= bv),
        lambda g, av, bv: g * (av < bv),
    )


def neg(x) -> Tensor:
    x = as_tensor(x)
    return apply_op("neg", (x,), -x.values, lambda g: (-g,))


def pow_const(x, power: float) -> Tensor:
    """x ** power for a constant real power and nonnegative base."""
    x = as_tensor(x)
    power = float(power)
    if power == 0.0:
        return apply_op("pow", (x,), np.ones_like(x.values), lambda g: (np.zeros_like(g),))
    out = x.values**power

    def bwd(g):
        factor = power * x.values ** (power - 1.0)
        if power < 1.0:
            factor = np.where(x.values > 0.0, factor, 0.0)
        return (g * factor,)

    return apply_op("pow", (x,), out, bwd)


def log(x, epsilon: float = 1e-12) -> Tensor:
    """Natural log with the argument clamped to ``>= epsilon``.

    Inside the clamped region the forward value is the constant
    ``log(epsilon)``, so the gradient there is zero.
    """
    x = as_tensor(x)
    if epsilon <= 0.0:
        raise ConfigError(f"log clamp must be positive, got {epsilon}")
    xv = x.values
    out = np.log(np.maximum(xv, epsilon))

    def bwd(g):
        return (np.where(xv >= epsilon, g / np.maximum(xv, epsilon), 0.0),)

    return apply_op("log", (x,), out, bwd)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.values < 0.0):
        raise ShapeError("sqrt of a negative value")
    out = np.sqrt(x.values)

    def bwd(g):
        return (np.where(out > 0.0, 0.5 * g / np.where(out > 0.0, out, 1.0), 0.0),)

    return apply_op("sqrt", (x,), out, bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0.0
    return apply_op("relu", (x,), x.values * mask, lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    """Numerically stable logistic, clipped into the open interval (0, 1)."""
    x = as_tensor(x)
    flat = x.values.ravel()
    out = np.empty_like(flat)
    pos = flat >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    out = np.clip(out, _SIG_LO, _SIG_HI).reshape(x.values.shape)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return apply_op("sigmoid", (x,), out, bwd)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate).

    Identity (and no generator draw) when not training or when rate is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires a random generator")
    scale = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    return apply_op("dropout", (x,), x.values * scale, lambda g: (g * scale,))


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW, square kernel."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d kernel must be (C_out, C_in, k, k), got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    in_hw = (x.shape[2], x.shape[3])
    out = K.conv2d_forward(x.values, weight.values, bias.values, stride, padding)

    def bwd(g):
        dx = K.conv2d_backward_input(g, weight.values, in_hw, stride, padding)
        dw, db = K.conv2d_backward_params(x.values, g, k, stride, padding)
        return dx, dw, db

    return apply_op("conv2d", (x, weight, bias), out, bwd)


def max_pool2d(x, k: int, stride: int | None = None) -> Tensor:
    """Max pooling; ties inside a window go to the first element row-major."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d input must be NCHW, got {x.shape}")
    if k < 1:
        raise ConfigError(f"pool window must be >= 1, got {k}")
    stride = k if stride is None else stride
    in_hw = (x.shape[2], x.shape[3])
    out, arg = K.maxpool_forward(x.values, k, stride)

    def bwd(g):
        return (K.maxpool_backward(g, arg, in_hw),)

    return apply_op("max_pool2d", (x,), out, bwd)


def global_avg_pool(x) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool input must be NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = x.values.mean(axis=(2, 3))

    def bwd(g):
        gx = np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w))
        return (np.ascontiguousarray(gx),)

    return apply_op("global_avg_pool", (x,), out, bwd)


def dense(x, weight, bias) -> Tensor:
    """Affine layer: (N, D) @ (K, D)^T + (K,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weight, got {x.shape} and {weight.shape}")
    k_out, d = weight.shape
    if x.shape[1] != d:
        raise ShapeError(f"input width {x.shape[1]} does not match weight width {d}")
    if bias.shape != (k_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {k_out} outputs")
    out = x.values @ weight.values.T + bias.values

    def bwd(g):
        return g @ weight.values, g.T @ x.values, g.sum(axis=0)

    return apply_op("dense", (x, weight, bias), out, bwd)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xv = x.values
    out = xv.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % xv.ndim for a in axes):
                gg = np.expand_dims(gg, ax)
        return (np.ascontiguousarray(np.broadcast_to(gg, xv.shape)),)

    return apply_op("sum", (x,), out, bwd)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xv = x.values
    out = xv.mean(axis=axis, keepdims=keepdims)
    count = xv.size if axis is None else np.prod(
        [xv.shape[a % xv.ndim] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def bwd(g):
        gg = g
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % xv.ndim for a in axes):
                gg = np.expand_dims(gg, ax)
        return (np.ascontiguousarray(np.broadcast_to(gg / count, xv.shape)),)

    return apply_op("mean", (x,), out, bwd)


def per_sample_max(x) -> Tensor:
    """Max over all non-batch axes, keepdims; first-occurrence tie routing."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"per_sample_max needs a batch axis, got shape {x.shape}")
    n = x.shape[0]
    flat = x.values.reshape(n, -1)
    idx = flat.argmax(axis=1)
    keep_shape = (n,) + (1,) * (x.ndim - 1)
    out = flat[np.arange(n), idx].reshape(keep_shape)

    def bwd(g):
        gz = np.zeros_like(flat)
        gz[np.arange(n), idx] = g.reshape(n)
        return (gz.reshape(x.values.shape),)

    return apply_op("per_sample_max", (x,), out, bwd)


def masked_fill(x, keep: np.ndarray, fill: float) -> Tensor:
    """Keep ``x`` where the boolean mask holds, else the constant ``fill``."""
    x = as_tensor(x)
    keep = np.broadcast_to(keep, x.values.shape)
    out = np.where(keep, x.values, fill)
    return apply_op("masked_fill", (x,), out, lambda g: (g * keep,))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    nd = parts[0].ndim
    for p in parts[1:]:
        if p.ndim != nd:
            raise ShapeError("concat inputs must have equal rank")
        for ax in range(nd):
            if ax != axis % nd and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(
                    f"concat inputs disagree on axis {ax}: {p.shape} vs {parts[0].shape}"
                )
    out = np.concatenate([p.values for p in parts], axis=axis)
    offsets = np.cumsum([p.shape[axis % nd] for p in parts])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return apply_op("concat", tuple(parts), out, bwd)


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner-aligned source indices and interpolation weights for one axis."""
    if dst == 1 or src == 1:
        zeros = np.zeros(dst, dtype=np.int64)
        return zeros, zeros, np.zeros(dst, dtype=np.float64)
    pos = np.arange(dst, dtype=np.float64) * ((src - 1) / (dst - 1))
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src - 1)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_bilinear(x, out_hw: tuple[int, int]) -> Tensor:
    """Corner-aligned bilinear resampling of the two trailing axes of NCHW.

    Equal source and target extents are a no-op (the input tensor is
    returned unchanged).
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"resize_bilinear input must be NCHW, got {x.shape}")
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise ConfigError(f"target extents must be >= 1, got {(oh, ow)}")
    n, c, h, w = x.shape
    if (h, w) == (oh, ow):
        return x
    y0, y1, wy = _axis_weights(h, oh)
    x0, x1, wx = _axis_weights(w, ow)
    wy = wy[:, None]
    xv = x.values
    g00 = xv[:, :, y0, :][:, :, :, x0]
    g01 = xv[:, :, y0, :][:, :, :, x1]
    g10 = xv[:, :, y1, :][:, :, :, x0]
    g11 = xv[:, :, y1, :][:, :, :, x1]
    out = (1 - wy) * ((1 - wx) * g00 + wx * g01) + wy * ((1 - wx) * g10 + wx * g11)

    def bwd(g):
        dx = np.zeros((n, c, h, w), dtype=np.float64)
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        for yi, wgt_y in ((y0, 1 - wy), (y1, wy)):
            for xi, wgt_x in ((x0, 1 - wx), (x1, wx)):
                np.add.at(
                    dx,
                    (ni, ci, yi[None, None, :, None], xi[None, None, None, :]),
                    g * (wgt_y * wgt_x),
                )
        return (dx,)

    return apply_op("resize_bilinear", (x,), out, bwd)


def _coerce(other):
    if isinstance(other, (Tensor, int, float, np.ndarray, np.floating, np.integer)):
        return as_tensor(other)
    return None


def _dunder(fn, swap=False):
    def op(self, other):
        o = _coerce(other)
        if o is None:
            return NotImplemented
        return fn(o, self) if swap else fn(self, o)

    return op


Tensor.__add__ = _dunder(add)
Tensor.__radd__ = _dunder(add, swap=True)
Tensor.__sub__ = _dunder(sub)
Tensor.__rsub__ = _dunder(sub, swap=True)
Tensor.__mul__ = _dunder(mul)
Tensor.__rmul__ = _dunder(mul, swap=True)
Tensor.__truediv__ = _dunder(div)
Tensor.__rtruediv__ = _dunder(div, swap=True)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: (
    pow_const(self, p) if isinstance(p, (int, float)) else NotImplemented
)
