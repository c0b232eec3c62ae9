# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv3d kernels.

Same contracts as ``stclr.kernels._conv_np``; the loops are arranged so the
innermost index runs along the contiguous width axis, which the C compiler
can vectorize. Single-threaded on purpose: results must be bit-reproducible
for a fixed input regardless of machine load.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    cnp.float32_t
    cnp.float64_t


def conv3d_forward(x, w, bias, stride, padding):
    xp = _pad(x, padding)
    b, co, to, ho, wo = output_shape(x.shape, w.shape, stride, padding)
    out = np.zeros((b, co, to, ho, wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _forward[cnp.float32_t](xp, np.ascontiguousarray(w), out, stride[0], stride[1], stride[2])
    else:
        _forward[cnp.float64_t](xp, np.ascontiguousarray(w), out, stride[0], stride[1], stride[2])
    if bias is not None:
        out += bias.reshape(1, co, 1, 1, 1)
    return out


def conv3d_backward_input(gout, w, x_shape, stride, padding):
    pt, ph, pw = padding
    b, ci, t, h, v = x_shape
    gxp = np.zeros((b, ci, t + 2 * pt, h + 2 * ph, v + 2 * pw), dtype=gout.dtype)
    if gout.dtype == np.float32:
        _backward_input[cnp.float32_t](np.ascontiguousarray(gout), np.ascontiguousarray(w), gxp,
                                       stride[0], stride[1], stride[2])
    else:
        _backward_input[cnp.float64_t](np.ascontiguousarray(gout), np.ascontiguousarray(w), gxp,
                                       stride[0], stride[1], stride[2])
    return np.ascontiguousarray(gxp[:, :, pt : pt + t, ph : ph + h, pw : pw + v])


def conv3d_backward_weight(x, gout, w_shape, stride, padding):
    xp = _pad(x, padding)
    gw = np.zeros(w_shape, dtype=gout.dtype)
    if gout.dtype == np.float32:
        _backward_weight[cnp.float32_t](xp, np.ascontiguousarray(gout), gw,
                                        stride[0], stride[1], stride[2])
    else:
        _backward_weight[cnp.float64_t](xp, np.ascontiguousarray(gout), gw,
                                        stride[0], stride[1], stride[2])
    return gw


def output_shape(x_shape, w_shape, stride, padding):
    b, _, t, h, w = x_shape
    co, _, kt, kh, kw = w_shape
    return (
        b,
        co,
        (t + 2 * padding[0] - kt) // stride[0] + 1,
        (h + 2 * padding[1] - kh) // stride[1] + 1,
        (w + 2 * padding[2] - kw) // stride[2] + 1,
    )


def _pad(x, padding):
    pt, ph, pw = padding
    if pt == 0 and ph == 0 and pw == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


cdef void _forward(real[:, :, :, :, ::1] xp, real[:, :, :, :, ::1] w,
                   real[:, :, :, :, ::1] out,
                   Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t nb = out.shape[0], co = out.shape[1]
    cdef Py_ssize_t to = out.shape[2], ho = out.shape[3], wo = out.shape[4]
    cdef Py_ssize_t ci = w.shape[1], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t b, o, c, i, j, k, t, h, v
    cdef real wv
    for b in range(nb):
        for o in range(co):
            for c in range(ci):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            wv = w[o, c, i, j, k]
                            for t in range(to):
                                for h in range(ho):
                                    for v in range(wo):
                                        out[b, o, t, h, v] += wv * xp[b, c, t * st + i, h * sh + j, v * sw + k]


cdef void _backward_input(real[:, :, :, :, ::1] gout, real[:, :, :, :, ::1] w,
                          real[:, :, :, :, ::1] gxp,
                          Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t nb = gout.shape[0], co = gout.shape[1]
    cdef Py_ssize_t to = gout.shape[2], ho = gout.shape[3], wo = gout.shape[4]
    cdef Py_ssize_t ci = w.shape[1], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t b, o, c, i, j, k, t, h, v
    cdef real wv
    for b in range(nb):
        for c in range(ci):
            for o in range(co):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            wv = w[o, c, i, j, k]
                            for t in range(to):
                                for h in range(ho):
                                    for v in range(wo):
                                        gxp[b, c, t * st + i, h * sh + j, v * sw + k] += wv * gout[b, o, t, h, v]


cdef void _backward_weight(real[:, :, :, :, ::1] xp, real[:, :, :, :, ::1] gout,
                           real[:, :, :, :, ::1] gw,
                           Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t nb = gout.shape[0], co = gout.shape[1]
    cdef Py_ssize_t to = gout.shape[2], ho = gout.shape[3], wo = gout.shape[4]
    cdef Py_ssize_t ci = gw.shape[1], kt = gw.shape[2], kh = gw.shape[3], kw = gw.shape[4]
    cdef Py_ssize_t b, o, c, i, j, k, t, h, v
    cdef real acc
    for b in range(nb):
        for o in range(co):
            for c in range(ci):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            acc = 0
                            for t in range(to):
                                for h in range(ho):
                                    for v in range(wo):
                                        acc += xp[b, c, t * st + i, h * sh + j, v * sw + k] * gout[b, o, t, h, v]
                            gw[o, c, i, j, k] += acc
