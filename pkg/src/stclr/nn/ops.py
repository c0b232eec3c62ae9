"""Differentiable primitives.

Each op computes its value eagerly with NumPy and registers a closure that
maps the upstream gradient to per-parent gradients. Broadcasting operands
is allowed; `_unbroadcast` folds the upstream gradient back onto the
operand's shape.
"""

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _coerce_pair(a, b):
    """Lift operands to Tensors without accidental float64 promotion."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _coerce_pair(a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), bw)


def sub(a, b):
    a, b = _coerce_pair(a, b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), bw)


def mul(a, b):
    a, b = _coerce_pair(a, b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), bw)


def div(a, b):
    a, b = _coerce_pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_node(out, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(out, (a, b), bw)


def transpose(a):
    a = as_tensor(a)

    def bw(g):
        return (g.T,)

    return make_node(a.data.T, (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return make_node(a.data.reshape(shape), (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return make_node(out, (a,), bw)


def log(a):
    a = as_tensor(a)

    def bw(g):
        return (g / a.data,)

    return make_node(np.log(a.data), (a,), bw)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        return (g / (2.0 * out),)

    return make_node(out, (a,), bw)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0)

    def bw(g):
        return (g * (a.data > 0),)

    return make_node(out, (a,), bw)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return make_node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def dense(x, w, b=None):
    """y = x @ w.T (+ b); w has shape [out_features, in_features]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense: input dim {x.shape[-1]} != weight in dim {w.shape[1]}")
    out = matmul(x, transpose(w))
    if b is not None:
        out = add(out, b)
    return out


def conv3d(x, w, bias=None, stride=(1, 1, 1), padding=(0, 0, 0)):
    """Cross-correlation of x[B,Ci,T,H,W] with w[Co,Ci,t,d1,d2] over zero padding."""
    x, w = as_tensor(x), as_tensor(w)
    stride = tuple(int(s) for s in stride)
    padding = tuple(int(p) for p in padding)
    if any(s < 1 for s in stride):
        raise ValueError(f"conv3d: stride must be positive, got {stride}")
    if any(p < 0 for p in padding):
        raise ValueError(f"conv3d: padding must be non-negative, got {padding}")
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d: expected 5-d input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d: input channels {x.shape[1]} != weight channels {w.shape[1]}")
    out_shape = kernels.conv3d_output_shape(x.shape, w.shape, stride, padding)
    if any(d < 1 for d in out_shape[2:]):
        raise ShapeError(
            f"conv3d: empty output extent {out_shape[2:]} for input {x.shape}, "
            f"kernel {w.shape[2:]}, stride {stride}, padding {padding}"
        )
    b = as_tensor(bias) if bias is not None else None
    out = kernels.conv3d_forward(
        x.data, w.data, b.data if b is not None else None, stride, padding
    )

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = (
            kernels.conv3d_backward_input(g, w.data, x.shape, stride, padding)
            if x.requires_grad
            else None
        )
        gw = (
            kernels.conv3d_backward_weight(x.data, g, w.shape, stride, padding)
            if w.requires_grad
            else None
        )
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3, 4)) if b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw)


def adaptive_avg_pool3d(x):
    """Global average over (T,H,W) per channel: [B,C,T,H,W] -> [B,C]."""
    x = as_tensor(x)
    if x.ndim != 5:
        raise ShapeError(f"adaptive_avg_pool3d: expected 5-d input, got {x.shape}")
    return reshape(mean(x, axis=(2, 3, 4)), (x.shape[0], x.shape[1]))


def batchnorm3d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (B,T,H,W).

    Train mode normalizes with batch statistics (gradients flow through
    them) and updates the running buffers in place with the unbiased batch
    variance. Eval mode normalizes with the running buffers as constants.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 5:
        raise ShapeError(f"batchnorm3d: expected 5-d input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm3d: gamma/beta must have shape ({c},)")
    gamma_b = reshape(gamma, (1, c, 1, 1, 1))
    beta_b = reshape(beta, (1, c, 1, 1, 1))
    if training:
        count = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
        if count <= 1:
            raise ValueError(
                "batchnorm3d: train mode needs more than one element per channel"
            )
        mu = mean(x, axis=(0, 2, 3, 4), keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=(0, 2, 3, 4), keepdims=True)
        inv = div(1.0, sqrt(add(var, eps)))
        xhat = mul(centered, inv)
        # running stats live outside the graph; unbiased variance by convention
        batch_mean = mu.data.reshape(c)
        batch_var = var.data.reshape(c) * (count / (count - 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * batch_mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * batch_var.astype(running_var.dtype)
    else:
        rm = Tensor(running_mean.reshape(1, c, 1, 1, 1).astype(x.dtype, copy=False))
        rv = Tensor(running_var.reshape(1, c, 1, 1, 1).astype(x.dtype, copy=False))
        xhat = div(sub(x, rm), sqrt(add(rv, eps)))
    return add(mul(xhat, gamma_b), beta_b)


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-subtracted."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be [B,C], got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"softmax_cross_entropy: labels must be [{b}], got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0,{c})")
    labels = labels.astype(np.int64)
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(denom)
    loss = -logp[np.arange(b), labels].mean()

    def bw(g):
        p = ez / denom
        p[np.arange(b), labels] -= 1.0
        return ((np.asarray(g) * p / b).astype(z.dtype, copy=False),)

    return make_node(np.asarray(loss, dtype=z.dtype), (logits,), bw)


def logsumexp_rows(s, mask):
    """Differentiable log(sum_k mask[.,k] * exp(s[.,k])) per row, max-subtracted.

    The per-row max is treated as a constant shift, which leaves gradients
    unchanged; `mask` is a constant 0/1 array.
    """
    s = as_tensor(s)
    m = s.data.max(axis=1, keepdims=True)
    shifted = sub(s, Tensor(m))
    masked = mul(exp(shifted), Tensor(mask.astype(s.dtype, copy=False)))
    return add(log(sum_(masked, axis=1)), Tensor(m.reshape(-1)))
