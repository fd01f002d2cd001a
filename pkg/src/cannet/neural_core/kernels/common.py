"""Shape arithmetic shared by the compiled and numpy kernel backends."""

from __future__ import annotations

import numpy as np

from ...errors import ConfigError, ShapeError


def conv_output_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    """Output extents of a square-kernel convolution.

    The windowing must tile exactly: a remainder under the stride is a
    configuration error rather than a silent floor.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ConfigError(f"padding must be >= 0, got {pad}")
    span_h = h + 2 * pad - k
    span_w = w + 2 * pad - k
    if span_h < 0 or span_w < 0:
        raise ShapeError(f"kernel {k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if span_h % stride or span_w % stride:
        raise ConfigError(
            f"non-integral output extent for input {h}x{w}, kernel {k}, "
            f"stride {stride}, padding {pad}"
        )
    return span_h // stride + 1, span_w // stride + 1


def pool_output_hw(h: int, w: int, k: int, stride: int) -> tuple[int, int]:
    """Output extents of max pooling; same exact-tiling rule, no padding."""
    return conv_output_hw(h, w, k, stride, 0)


def pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing axes of an NCHW array."""
    if pad == 0:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out
