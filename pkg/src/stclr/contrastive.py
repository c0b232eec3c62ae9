"""Normalized temperature-scaled cross-entropy over paired video views.

Views of the same clip sit at adjacent batch positions (2k, 2k+1) and act
as each other's positive; every other row of the batch is a negative. The
anchor's own similarity is the only term excluded from the denominator, so
the positive similarity appears in both numerator and denominator.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import BatchAssemblyError, DegenerateEmbeddingError
from .nn import Tensor, ops

NORM_FLOOR = 1e-12


def cosine(z_i, z_j):
    """z_i.z_j / (|z_i||z_j|), clamped to [-1, 1] against rounding."""
    a = np.asarray(z_i, dtype=np.float64).reshape(-1)
    b = np.asarray(z_j, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise DegenerateEmbeddingError(
            f"embedding norm below {NORM_FLOOR:g}: {min(na, nb):g}"
        )
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def interleaved_pairs(count):
    """pair_of for adjacent positives: 0<->1, 2<->3, ..."""
    if count % 2:
        raise BatchAssemblyError(f"need an even view count, got {count}")
    pair_of = np.arange(count, dtype=np.int64)
    pair_of[0::2] += 1
    pair_of[1::2] -= 1
    return pair_of


@dataclass
class ContrastiveBatch:
    """2N embeddings with their positive-pair mapping and temperature."""

    embeddings: Union[Tensor, np.ndarray]
    pair_of: np.ndarray
    tau: float = 0.5
    clip_ids: Optional[Sequence] = None

    def __post_init__(self):
        data = self.embeddings.data if isinstance(self.embeddings, Tensor) else self.embeddings
        if data.ndim != 2:
            raise BatchAssemblyError(f"embeddings must be 2-d, got shape {data.shape}")
        count = data.shape[0]
        if count % 2 or count < 2:
            raise BatchAssemblyError(f"need an even number of views >= 2, got {count}")
        self.pair_of = np.asarray(self.pair_of, dtype=np.int64)
        p = self.pair_of
        if p.shape != (count,) or np.any(p[p] != np.arange(count)) or np.any(p == np.arange(count)):
            raise BatchAssemblyError("pair_of must be an involution without fixed points")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def assemble_batch(embeddings, clip_ids, tau=0.5):
    """Build a batch from views laid out as consecutive same-clip pairs."""
    ids = list(clip_ids)
    if len(ids) % 2:
        raise BatchAssemblyError(f"need an even view count, got {len(ids)}")
    seen = set()
    for k in range(0, len(ids), 2):
        a, b = ids[k], ids[k + 1]
        if a != b:
            raise BatchAssemblyError(
                f"views at positions {k},{k + 1} come from different clips ({a!r}, {b!r})"
            )
        if a in seen:
            raise BatchAssemblyError(f"clip {a!r} appears in more than one pair")
        seen.add(a)
    return ContrastiveBatch(
        embeddings=embeddings,
        pair_of=interleaved_pairs(len(ids)),
        tau=tau,
        clip_ids=ids,
    )


def nt_xent(batch, tau=None):
    """Mean over all 2N anchors of -log softmax(positive | non-self rows).

    Accepts a ContrastiveBatch, or a raw [2N, d] Tensor/array with adjacent
    positives plus an explicit `tau`. Differentiable w.r.t. the embeddings;
    row-wise max subtraction keeps the log-sum-exp stable.
    """
    if isinstance(batch, ContrastiveBatch):
        z = batch.embeddings
        pair_of = batch.pair_of
        tau = batch.tau if tau is None else tau
    else:
        z = batch
        data = z.data if isinstance(z, Tensor) else np.asarray(z)
        pair_of = interleaved_pairs(data.shape[0])
        if tau is None:
            tau = 0.5
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if not isinstance(z, Tensor):
        z = Tensor(z)

    count = z.data.shape[0]
    norms_data = np.linalg.norm(z.data, axis=1)
    if np.any(norms_data < NORM_FLOOR):
        worst = int(np.argmin(norms_data))
        raise DegenerateEmbeddingError(
            f"embedding {worst} has norm {norms_data[worst]:g} < {NORM_FLOOR:g}"
        )

    norms = ops.sqrt(ops.sum_(ops.mul(z, z), axis=1, keepdims=True))
    zn = ops.div(z, norms)
    sims = ops.div(ops.matmul(zn, ops.transpose(zn)), tau)

    not_self = ~np.eye(count, dtype=bool)
    denom = ops.logsumexp_rows(sims, not_self)
    pos_mask = np.zeros((count, count), dtype=z.data.dtype)
    pos_mask[np.arange(count), pair_of] = 1
    pos = ops.sum_(ops.mul(sims, pos_mask), axis=1)
    return ops.mean(ops.sub(denom, pos))
