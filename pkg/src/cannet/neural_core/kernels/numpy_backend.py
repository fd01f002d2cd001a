"""Pure-numpy kernel backend.

Convolutions are lowered to im2col plus a batched matmul so the heavy
lifting lands in BLAS; pooling walks the k*k window offsets as strided
slices.  Semantics (argmax tie policy, accumulation order of overlapping
windows) match the compiled backend exactly.
"""

from __future__ import annotations

import numpy as np

from .common import conv_output_hw, pad2d, pool_output_hw


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*k*k, oh*ow) patch matrix."""
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, k, k, oh, ow), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(
    dcols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int, stride: int, oh: int, ow: int
) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto the padded plane."""
    dxp = np.zeros((n, c, hp, wp), dtype=np.float64)
    dc = dcols.reshape(n, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dc[:, :, i, j]
    return dxp


def conv2d_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int
) -> np.ndarray:
    n, _, h, wid = x.shape
    c_out, c_in, k, _ = w.shape
    oh, ow = conv_output_hw(h, wid, k, stride, pad)
    xp = pad2d(x, pad)
    cols = _im2col(xp, k, stride, oh, ow)
    out = np.matmul(w.reshape(c_out, c_in * k * k), cols)
    out += b[:, None]
    return np.ascontiguousarray(out.reshape(n, c_out, oh, ow))


def conv2d_backward_input(
    dout: np.ndarray, w: np.ndarray, in_hw: tuple[int, int], stride: int, pad: int
) -> np.ndarray:
    n, c_out, oh, ow = dout.shape
    _, c_in, k, _ = w.shape
    h, wid = in_hw
    dcols = np.matmul(w.reshape(c_out, c_in * k * k).T, dout.reshape(n, c_out, oh * ow))
    dxp = _col2im(dcols, n, c_in, h + 2 * pad, wid + 2 * pad, k, stride, oh, ow)
    if pad:
        dxp = dxp[:, :, pad : pad + h, pad : pad + wid]
    return np.ascontiguousarray(dxp)


def conv2d_backward_params(
    x: np.ndarray, dout: np.ndarray, k: int, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    n, c_in, _, _ = x.shape
    _, c_out, oh, ow = dout.shape
    xp = pad2d(x, pad)
    cols = _im2col(xp, k, stride, oh, ow)
    dm = dout.reshape(n, c_out, oh * ow)
    dw = np.matmul(dm, cols.transpose(0, 2, 1)).sum(axis=0)
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dw.reshape(c_out, c_in, k, k)), db


def maxpool_forward(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns pooled values and the flat (row*W + col) argmax per window.

    Ties go to the first window element in row-major order, so the running
    comparison below uses strict ``>``.
    """
    n, c, h, w = x.shape
    oh, ow = pool_output_hw(h, w, k, stride)
    base_h = (np.arange(oh) * stride)[:, None]
    base_w = (np.arange(ow) * stride)[None, :]
    best = np.ascontiguousarray(x[:, :, 0 : stride * oh : stride, 0 : stride * ow : stride])
    arg = np.broadcast_to(base_h * w + base_w, (n, c, oh, ow)).copy()
    for i in range(k):
        for j in range(k):
            if i == 0 and j == 0:
                continue
            cand = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            better = cand > best
            best = np.where(better, cand, best)
            arg = np.where(better, (base_h + i) * w + (base_w + j), arg)
    return best, arg.astype(np.int64, copy=False)


def maxpool_backward(
    dout: np.ndarray, arg: np.ndarray, in_hw: tuple[int, int]
) -> np.ndarray:
    n, c, oh, ow = dout.shape
    h, w = in_hw
    dx = np.zeros((n, c, h * w), dtype=np.float64)
    plane = np.arange(n * c).reshape(n, c, 1, 1)
    flat_idx = (plane * (h * w) + arg).ravel()
    np.add.at(dx.reshape(-1), flat_idx, dout.ravel())
    return dx.reshape(n, c, h, w)
