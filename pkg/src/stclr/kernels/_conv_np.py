"""Pure-NumPy conv3d kernels.

Fallback backend used when the compiled extension is unavailable (and the
reference the compiled kernels are benchmarked against). All three kernels
decompose the convolution into one strided-view contraction per kernel
offset, so the heavy lifting stays inside vectorized NumPy.

Convolution here means cross-correlation over a zero-padded input, the
usual deep-learning convention.
"""

import numpy as np


def _pad(x, padding):
    pt, ph, pw = padding
    if pt == 0 and ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _out_extent(size, pad, k, stride):
    return (size + 2 * pad - k) // stride + 1


def output_shape(x_shape, w_shape, stride, padding):
    b, _, t, h, w = x_shape
    co, _, kt, kh, kw = w_shape
    st, sh, sw = stride
    pt, ph, pw = padding
    return (
        b,
        co,
        _out_extent(t, pt, kt, st),
        _out_extent(h, ph, kh, sh),
        _out_extent(w, pw, kw, sw),
    )


def conv3d_forward(x, w, bias, stride, padding):
    """out[b,o,t,h,v] = sum_{c,i,j,k} x_pad[b,c,t*st+i,h*sh+j,v*sw+k] * w[o,c,i,j,k]."""
    b, co, to, ho, wo = output_shape(x.shape, w.shape, stride, padding)
    st, sh, sw = stride
    kt, kh, kw = w.shape[2:]
    xp = _pad(x, padding)
    out = np.zeros((b, co, to, ho, wo), dtype=x.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                view = xp[
                    :, :, i : i + to * st : st, j : j + ho * sh : sh, k : k + wo * sw : sw
                ]
                out += np.einsum("bcthv,oc->bothv", view, w[:, :, i, j, k])
    if bias is not None:
        out += bias.reshape(1, co, 1, 1, 1)
    return out


def conv3d_backward_input(gout, w, x_shape, stride, padding):
    """Gradient of the forward output w.r.t. the (unpadded) input."""
    st, sh, sw = stride
    pt, ph, pw = padding
    kt, kh, kw = w.shape[2:]
    b, ci, t, h, v = x_shape
    to, ho, wo = gout.shape[2:]
    gxp = np.zeros((b, ci, t + 2 * pt, h + 2 * ph, v + 2 * pw), dtype=gout.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                # for fixed (i,j,k) the strided targets are disjoint, so += on
                # the view is safe
                gxp[
                    :, :, i : i + to * st : st, j : j + ho * sh : sh, k : k + wo * sw : sw
                ] += np.einsum("bothv,oc->bcthv", gout, w[:, :, i, j, k])
    return gxp[:, :, pt : pt + t, ph : ph + h, pw : pw + v]


def conv3d_backward_weight(x, gout, w_shape, stride, padding):
    """Gradient of the forward output w.r.t. the weights."""
    st, sh, sw = stride
    kt, kh, kw = w_shape[2:]
    to, ho, wo = gout.shape[2:]
    xp = _pad(x, padding)
    gw = np.zeros(w_shape, dtype=gout.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                view = xp[
                    :, :, i : i + to * st : st, j : j + ho * sh : sh, k : k + wo * sw : sw
                ]
                gw[:, :, i, j, k] = np.einsum("bothv,bcthv->oc", gout, view)
    return gw
