"""Central finite-difference verification of reverse-mode gradients.

All checks run in float64; float32 does not have the headroom for a 1e-4
step. `relative_error` uses a 1e-8 absolute floor so zero gradients do not
divide by zero.
"""

import numpy as np

from .tensor import Tensor, backward, no_grad

DEFAULT_STEP = 1e-4
DEFAULT_TOLERANCE = 1e-3


def relative_error(analytic, numeric):
    """Elementwise |a-n| / max(|a|, |n|, 1e-8), reduced to the max."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def _flat_indices(shape, sample, rng):
    size = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if sample is None or sample >= size:
        return np.arange(size)
    return rng.choice(size, size=sample, replace=False)


def check_gradients(f, leaves, step=DEFAULT_STEP, sample=None, rng=None):
    """Compare backward() against central differences on scalar f(*leaves).

    `leaves` are float64 Tensors with requires_grad. When `sample` is set,
    only that many randomly chosen entries per leaf are perturbed; analytic
    values are compared at the same entries. Returns the max relative error
    across all checked entries.
    """
    for leaf in leaves:
        if leaf.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 leaves")
        leaf.grad = None
    loss = f(*leaves)
    backward(loss)
    analytic = [np.array(leaf.grad, dtype=np.float64) for leaf in leaves]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for leaf, grad in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in _flat_indices(leaf.data.shape, sample, rng):
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + step
                up = float(f(*leaves).data)
                flat[idx] = orig - step
                down = float(f(*leaves).data)
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(gflat[idx], numeric))
    return worst


def _leaf(rng, shape, scale=1.0):
    return Tensor(
        rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64
    )


def primitive_checks(seed=0):
    """Yield (name, max relative error) for each differentiable primitive."""
    from . import ops

    rng = np.random.default_rng(seed)

    def scalarize(t):
        return ops.sum_(ops.mul(t, t))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4))
    c = _leaf(rng, (4,))
    yield "add", check_gradients(lambda x, y: scalarize(ops.add(x, y)), [a, b])
    yield "sub", check_gradients(lambda x, y: scalarize(ops.sub(x, y)), [a, b])
    yield "mul", check_gradients(lambda x, y: scalarize(ops.mul(x, y)), [a, b])
    yield "div", check_gradients(
        lambda x, y: scalarize(ops.div(x, y)),
        [a, Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)],
    )
    yield "broadcast", check_gradients(
        lambda x, y: scalarize(ops.add(x, y)), [a, c]
    )
    m1 = _leaf(rng, (3, 5))
    m2 = _leaf(rng, (5, 2))
    yield "matmul", check_gradients(
        lambda x, y: scalarize(ops.matmul(x, y)), [m1, m2]
    )
    yield "transpose", check_gradients(lambda x: scalarize(ops.transpose(x)), [a])
    yield "reshape", check_gradients(
        lambda x: scalarize(ops.reshape(x, (4, 3))), [a]
    )
    yield "exp", check_gradients(lambda x: ops.sum_(ops.exp(x)), [a])
    pos = Tensor(rng.uniform(0.5, 3.0, (3, 4)), requires_grad=True, dtype=np.float64)
    yield "log", check_gradients(lambda x: ops.sum_(ops.log(x)), [pos])
    yield "sqrt", check_gradients(lambda x: ops.sum_(ops.sqrt(x)), [pos])
    yield "relu", check_gradients(lambda x: scalarize(ops.relu(x)), [a])
    yield "sum_axis", check_gradients(
        lambda x: scalarize(ops.sum_(x, axis=0, keepdims=True)), [a]
    )
    yield "mean", check_gradients(lambda x: scalarize(ops.mean(x, axis=1)), [a])

    w = _leaf(rng, (2, 4), scale=0.5)
    bias = _leaf(rng, (2,))
    yield "dense", check_gradients(
        lambda x, ww, bb: scalarize(ops.dense(x, ww, bb)), [a, w, bias]
    )

    x5 = _leaf(rng, (2, 2, 4, 5, 5), scale=0.5)
    k = _leaf(rng, (3, 2, 2, 3, 3), scale=0.3)
    kb = _leaf(rng, (3,))
    yield "conv3d", check_gradients(
        lambda x, ww, bb: scalarize(
            ops.conv3d(x, ww, bb, stride=(1, 2, 2), padding=(1, 1, 1))
        ),
        [x5, k, kb],
    )
    yield "adaptive_avg_pool3d", check_gradients(
        lambda x: scalarize(ops.adaptive_avg_pool3d(x)), [x5]
    )

    gamma = Tensor(np.ones(2), requires_grad=True, dtype=np.float64)
    beta = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
    # A plain (or squared) sum of normalized output is independent of x by
    # construction, which leaves a zero gradient for FD to chase; weighting
    # each element first keeps the input gradient non-degenerate.
    bn_w = Tensor(rng.normal(size=x5.shape))

    def bn_loss(x, g, bt):
        rm = np.zeros(2)
        rv = np.ones(2)
        out = ops.batchnorm3d(x, g, bt, rm, rv, training=True)
        return scalarize(ops.mul(out, bn_w))

    yield "batchnorm3d", check_gradients(bn_loss, [x5, gamma, beta])

    logits = _leaf(rng, (6, 4))
    labels = rng.integers(0, 4, size=6)
    yield "softmax_cross_entropy", check_gradients(
        lambda z: ops.softmax_cross_entropy(z, labels), [logits]
    )

    s = _leaf(rng, (5, 5))
    mask = ~np.eye(5, dtype=bool)
    yield "logsumexp_rows", check_gradients(
        lambda x: ops.sum_(ops.logsumexp_rows(x, mask)), [s]
    )


def small_network_check(seed=0):
    """FD over every parameter of a conv+bn+relu+pool+dense classifier."""
    from . import ops
    from .module import BatchNorm3d, Conv3d, Dense

    rng = np.random.default_rng(seed)
    conv = Conv3d(2, 3, (2, 3, 3), stride=(1, 2, 2), padding=(1, 1, 1),
                  bias=True, rng=rng, dtype=np.float64)
    bn = BatchNorm3d(3, dtype=np.float64)
    head = Dense(3, 4, rng=rng, dtype=np.float64)
    x = rng.standard_normal((4, 2, 3, 8, 8))
    labels = rng.integers(0, 4, size=4)
    params = [p for _, p in conv.named_parameters()]
    params += [p for _, p in bn.named_parameters()]
    params += [p for _, p in head.named_parameters()]

    def loss_fn(*_):
        h = ops.relu(bn(conv(Tensor(x, dtype=np.float64))))
        feats = ops.adaptive_avg_pool3d(h)
        return ops.softmax_cross_entropy(head(feats), labels)

    return check_gradients(loss_fn, params)


def nt_xent_check(seed=0, n_pairs=4, dim=6, tau=0.5):
    """FD of the contrastive loss w.r.t. the stacked embeddings."""
    from ..contrastive import nt_xent

    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((2 * n_pairs, dim)), requires_grad=True,
               dtype=np.float64)
    return check_gradients(lambda t: nt_xent(t, tau=tau), [z])


def composite_check(seed=0, sample=3):
    """Sampled FD through tiny encoder + projection + contrastive loss.

    Dense FD over every entry is quadratic in parameter count; sampling a
    few entries per tensor still touches every layer.
    """
    from ..contrastive import nt_xent
    from ..encoder import EncoderSpec, build_encoder, build_projection

    spec = EncoderSpec.tiny()
    rng = np.random.default_rng(seed)
    encoder = build_encoder(spec, rng=rng, dtype=np.float64)
    head = build_projection(spec, rng=rng, dtype=np.float64)
    encoder.train()
    x = rng.standard_normal((2, 3, 8, 16, 16)) * 0.5
    params = [p for _, p in encoder.named_parameters()]
    params += [p for _, p in head.named_parameters()]

    def loss_fn(*_):
        z = head(encoder(Tensor(x, dtype=np.float64)))
        return nt_xent(z, tau=0.5)

    return check_gradients(
        loss_fn, params, sample=sample, rng=np.random.default_rng(seed + 1)
    )


def run_suite(seed=0, include_composite=True):
    """Full report as an ordered {name: max relative error} dict."""
    report = {}
    for name, err in primitive_checks(seed):
        report[name] = err
    report["small_network"] = small_network_check(seed)
    report["nt_xent"] = nt_xent_check(seed)
    if include_composite:
        report["encoder_composite"] = composite_check(seed)
    return report
