# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled float64 conv/pool kernels.

Direct (non-im2col) loops, single-threaded.  Argmax tie policy and window
arithmetic match the numpy backend; values agree with it to rounding.
"""

import numpy as np

from .common import conv_output_hw, pad2d, pool_output_hw


cdef void _conv_fwd(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w,
                    const double[::1] b, double[:, :, :, ::1] out,
                    Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = out.shape[0], C_out = out.shape[1]
    cdef Py_ssize_t OH = out.shape[2], OW = out.shape[3]
    cdef Py_ssize_t C_in = xp.shape[1], K = w.shape[2]
    cdef Py_ssize_t n, co, ci, kh, kw, ho, wo
    cdef double wv
    cdef const double* xrow
    cdef double* orow
    for n in range(N):
        for co in range(C_out):
            for ho in range(OH):
                orow = &out[n, co, ho, 0]
                for wo in range(OW):
                    orow[wo] = b[co]
            for ci in range(C_in):
                for kh in range(K):
                    for kw in range(K):
                        wv = w[co, ci, kh, kw]
                        if stride == 1:
                            # unit-stride axpy rows: this is the hot path
                            for ho in range(OH):
                                xrow = &xp[n, ci, ho + kh, kw]
                                orow = &out[n, co, ho, 0]
                                for wo in range(OW):
                                    orow[wo] += wv * xrow[wo]
                        else:
                            for ho in range(OH):
                                xrow = &xp[n, ci, ho * stride + kh, kw]
                                orow = &out[n, co, ho, 0]
                                for wo in range(OW):
                                    orow[wo] += wv * xrow[wo * stride]


cdef void _conv_bwd_input(const double[:, :, :, ::1] dout, const double[:, :, :, ::1] w,
                          double[:, :, :, ::1] dxp, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = dout.shape[0], C_out = dout.shape[1]
    cdef Py_ssize_t OH = dout.shape[2], OW = dout.shape[3]
    cdef Py_ssize_t C_in = dxp.shape[1], K = w.shape[2]
    cdef Py_ssize_t n, co, ci, kh, kw, ho, wo
    cdef double wv
    cdef const double* grow
    cdef double* xrow
    for n in range(N):
        for ci in range(C_in):
            for co in range(C_out):
                for kh in range(K):
                    for kw in range(K):
                        wv = w[co, ci, kh, kw]
                        if stride == 1:
                            for ho in range(OH):
                                grow = &dout[n, co, ho, 0]
                                xrow = &dxp[n, ci, ho + kh, kw]
                                for wo in range(OW):
                                    xrow[wo] += wv * grow[wo]
                        else:
                            for ho in range(OH):
                                grow = &dout[n, co, ho, 0]
                                xrow = &dxp[n, ci, ho * stride + kh, kw]
                                for wo in range(OW):
                                    xrow[wo * stride] += wv * grow[wo]


cdef void _conv_bwd_params(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] dout,
                           double[:, :, :, ::1] dw, double[::1] db,
                           double[:, ::1] scratch, Py_ssize_t stride) noexcept nogil:
    # scratch is (K*K, OW): per-tap elementwise-product accumulators.  The
    # inner loops update independent lanes (no cross-lane reduction), so the
    # compiler can vectorize them under strict FP; each lane buffer is summed
    # once at the end in a fixed order, keeping results deterministic.
    cdef Py_ssize_t N = dout.shape[0], C_out = dout.shape[1]
    cdef Py_ssize_t OH = dout.shape[2], OW = dout.shape[3]
    cdef Py_ssize_t C_in = xp.shape[1], K = dw.shape[2]
    cdef Py_ssize_t n, co, ci, kh, kw, ho, wo
    cdef double acc
    cdef const double* xrow
    cdef const double* grow
    cdef double* srow
    for co in range(C_out):
        srow = &scratch[0, 0]
        for wo in range(OW):
            srow[wo] = 0.0
        for n in range(N):
            for ho in range(OH):
                grow = &dout[n, co, ho, 0]
                for wo in range(OW):
                    srow[wo] += grow[wo]
        acc = 0.0
        for wo in range(OW):
            acc += srow[wo]
        db[co] += acc
        for ci in range(C_in):
            if stride == 1:
                for kh in range(K):
                    for kw in range(K):
                        srow = &scratch[kh * K + kw, 0]
                        for wo in range(OW):
                            srow[wo] = 0.0
                for n in range(N):
                    for kh in range(K):
                        for kw in range(K):
                            srow = &scratch[kh * K + kw, 0]
                            for ho in range(OH):
                                xrow = &xp[n, ci, ho + kh, kw]
                                grow = &dout[n, co, ho, 0]
                                for wo in range(OW):
                                    srow[wo] += xrow[wo] * grow[wo]
                for kh in range(K):
                    for kw in range(K):
                        srow = &scratch[kh * K + kw, 0]
                        acc = 0.0
                        for wo in range(OW):
                            acc += srow[wo]
                        dw[co, ci, kh, kw] += acc
            else:
                for kh in range(K):
                    for kw in range(K):
                        acc = 0.0
                        for n in range(N):
                            for ho in range(OH):
                                xrow = &xp[n, ci, ho * stride + kh, kw]
                                grow = &dout[n, co, ho, 0]
                                for wo in range(OW):
                                    acc += xrow[wo * stride] * grow[wo]
                        dw[co, ci, kh, kw] += acc


cdef void _pool_fwd(const double[:, :, :, ::1] x, double[:, :, :, ::1] out,
                    long long[:, :, :, ::1] arg, Py_ssize_t k, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1]
    cdef Py_ssize_t OH = out.shape[2], OW = out.shape[3]
    cdef Py_ssize_t W = x.shape[3]
    cdef Py_ssize_t n, c, ho, wo, i, j, h0, w0
    cdef double best, v
    cdef long long bidx
    for n in range(N):
        for c in range(C):
            for ho in range(OH):
                for wo in range(OW):
                    h0 = ho * stride
                    w0 = wo * stride
                    best = x[n, c, h0, w0]
                    bidx = h0 * W + w0
                    for i in range(k):
                        for j in range(k):
                            v = x[n, c, h0 + i, w0 + j]
                            if v > best:
                                best = v
                                bidx = (h0 + i) * W + (w0 + j)
                    out[n, c, ho, wo] = best
                    arg[n, c, ho, wo] = bidx


cdef void _pool_bwd(const double[:, :, :, ::1] dout, const long long[:, :, :, ::1] arg,
                    double[:, :, :, ::1] dx) noexcept nogil:
    cdef Py_ssize_t N = dout.shape[0], C = dout.shape[1]
    cdef Py_ssize_t OH = dout.shape[2], OW = dout.shape[3]
    cdef Py_ssize_t W = dx.shape[3]
    cdef Py_ssize_t n, c, ho, wo
    cdef long long f
    for n in range(N):
        for c in range(C):
            for ho in range(OH):
                for wo in range(OW):
                    f = arg[n, c, ho, wo]
                    dx[n, c, f // W, f % W] += dout[n, c, ho, wo]


def conv2d_forward(x, w, b, stride, pad):
    n = x.shape[0]
    c_out, _, k, _ = w.shape
    oh, ow = conv_output_hw(x.shape[2], x.shape[3], k, stride, pad)
    xp = pad2d(x, pad)
    w = np.ascontiguousarray(w)
    b = np.ascontiguousarray(b)
    out = np.empty((n, c_out, oh, ow), dtype=np.float64)
    _conv_fwd(xp, w, b, out, stride)
    return out


def conv2d_backward_input(dout, w, in_hw, stride, pad):
    h, wid = in_hw
    n = dout.shape[0]
    c_in = w.shape[1]
    dout = np.ascontiguousarray(dout)
    w = np.ascontiguousarray(w)
    dxp = np.zeros((n, c_in, h + 2 * pad, wid + 2 * pad), dtype=np.float64)
    _conv_bwd_input(dout, w, dxp, stride)
    if pad:
        dxp = np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + wid])
    return dxp


def conv2d_backward_params(x, dout, k, stride, pad):
    c_in = x.shape[1]
    c_out = dout.shape[1]
    xp = pad2d(x, pad)
    dout = np.ascontiguousarray(dout)
    dw = np.zeros((c_out, c_in, k, k), dtype=np.float64)
    db = np.zeros(c_out, dtype=np.float64)
    scratch = np.zeros((k * k, dout.shape[3]), dtype=np.float64)
    _conv_bwd_params(xp, dout, dw, db, scratch, stride)
    return dw, db


def maxpool_forward(x, k, stride):
    n, c, h, w = x.shape
    oh, ow = pool_output_hw(h, w, k, stride)
    x = np.ascontiguousarray(x)
    out = np.empty((n, c, oh, ow), dtype=np.float64)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    _pool_fwd(x, out, arg, k, stride)
    return out, arg


def maxpool_backward(dout, arg, in_hw):
    n, c = dout.shape[0], dout.shape[1]
    h, w = in_hw
    dout = np.ascontiguousarray(dout)
    arg = np.ascontiguousarray(arg)
    dx = np.zeros((n, c, h, w), dtype=np.float64)
    _pool_bwd(dout, arg, dx)
    return dx
