"""Contrastive pretraining, two-phase fine-tuning, evaluation, and k-fold.

Every stochastic decision draws from a stream keyed by (master seed, phase,
epoch, clip index), never from a shared stateful generator, so results do
not depend on worker count or batch assembly order and runs are bit
reproducible. Pretraining touches clip frames only; labels stay unread
until fine-tuning.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .augment import eval_view, make_views, sample_temporal, spatial_augment
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .contrastive import assemble_batch, nt_xent
from .encoder import build_encoder, build_projection, count_parameters
from .errors import CheckpointError, ConfigError
from .nn import (
    Dense,
    Module,
    PlateauScheduler,
    Tensor,
    adam_step,
    backward,
    no_grad,
    sgd_momentum_step,
    softmax_cross_entropy,
    zero_grad,
)
from .video import (
    LabelTaxonomy,
    SyntheticSpec,
    generate_synthetic,
    label_subset,
    load_dataset,
    split_by_fold,
    split_folds,
)

# Stream keys: (seed, role, ...) must never collide across roles.
_S_ENC_INIT, _S_PROJ_INIT, _S_CLS_INIT = 11, 12, 13
_S_PRE_ORDER, _S_PRE_AUG = 21, 22
_S_FT_ORDER, _S_FT_AUG = 31, 32
_S_VAL_SPLIT = 41


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


class RunLogger:
    """Append-only JSON-lines log; pass path=None for a no-op logger."""

    def __init__(self, path=None):
        self._fh = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "a")

    def log(self, **record):
        if self._fh is None:
            return
        record.setdefault("ts", round(time.time(), 3))
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray  # [C, C] counts, rows = ground truth
    per_epoch: List[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "per_epoch": self.per_epoch,
            "wall_clock": self.wall_clock,
            "extra": self.extra,
        }


class Classifier(Module):
    """Pretrained encoder plus a fresh linear layer over its features."""

    def __init__(self, encoder, fc):
        super().__init__()
        self.encoder = encoder
        self.fc = fc

    def forward(self, x):
        return self.fc(self.encoder(x))


def _to_input(frames):
    """[n,H,W,3] -> [3,n,H,W] float32."""
    return np.ascontiguousarray(np.transpose(frames, (3, 0, 1, 2)), dtype=np.float32)


def _eval_array(desc, n, output_size):
    frames, _ = eval_view(desc.load().frames, n, output_size)
    return _to_input(frames)


def _train_view(desc, sampler, spatial, rng):
    clip = desc.load()
    indices = sample_temporal(clip, sampler, rng)
    frames, _ = spatial_augment(clip.frames[indices], spatial, rng)
    return _to_input(frames)


def _view_pair(desc, sampler, spatial, rng):
    v1, v2 = make_views(desc.load(), sampler, spatial, rng)
    return _to_input(v1.frames), _to_input(v2.frames)


def _chunks(order, size):
    for i in range(0, len(order), size):
        yield order[i : i + size]


def _map_workers(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def resolve_dataset(config, out_dir=None):
    """Load config.data.root, or generate/reuse synthetic data under out_dir."""
    if config.data.root:
        return load_dataset(config.data.root)
    syn = config.data.synthetic
    taxonomy = LabelTaxonomy.of_size(syn.classes)
    data_dir = Path(out_dir or config.out_dir) / "data"
    if (data_dir / "gen_params.csv").exists():
        return load_dataset(data_dir, taxonomy)
    spec = SyntheticSpec(
        classes=syn.classes,
        subjects=syn.subjects,
        videos_per_subject_per_class=syn.videos_per_subject_per_class,
        frames=syn.frames,
        height=syn.height,
        width=syn.width,
        noise_sigma=syn.noise_sigma,
        seed=config.seed,
    )
    return generate_synthetic(spec, data_dir)


def _module_arrays(prefix, module):
    return {prefix + name: arr for name, arr in module.state_arrays().items()}


def _momentum_slots(prefix, module):
    slots = {}
    for name, p in module.named_parameters():
        if p.momentum is not None:
            slots["momentum." + prefix + name] = p.momentum
    return slots


def _pretrain_checkpoint(config, spec, encoder, head, epoch):
    arrays = {}
    arrays.update(_module_arrays("encoder.", encoder))
    arrays.update(_module_arrays("projection.", head))
    optimizer = {}
    optimizer.update(_momentum_slots("encoder.", encoder))
    optimizer.update(_momentum_slots("projection.", head))
    return Checkpoint(
        encoder_digest=spec.digest(),
        epoch=epoch,
        arrays=arrays,
        optimizer=optimizer,
        scalars={
            "kind": "pretrain",
            "preset": config.preset,
            "variant": config.variant,
            "tau": config.tau,
            "seed": config.seed,
        },
    )


def pretrain(config, index, out_dir=None, logger=None, snapshot_epochs=(),
             sampler=None, spatial=None):
    """Contrastive pretraining; returns (final Checkpoint, per-epoch losses).

    Labels are never read. `snapshot_epochs` (1-based) adds mid-run
    checkpoint files under out_dir for the epoch study.
    """
    logger = logger or RunLogger(None)
    spec = config.encoder_spec()
    sampler = sampler or config.sampler_spec()
    spatial = spatial or config.spatial_spec()
    if len(index.clips) < 2:
        raise ConfigError("pretraining needs at least 2 clips for negatives")
    snapshot_epochs = set(int(e) for e in snapshot_epochs)
    interval = config.pretrain.checkpoint_interval
    out = Path(out_dir) if out_dir else None

    encoder = build_encoder(spec, rng=_stream(config.seed, _S_ENC_INIT))
    head = build_projection(spec, rng=_stream(config.seed, _S_PROJ_INIT))
    encoder.train()
    head.train()
    params = [p for _, p in encoder.named_parameters()]
    params += [p for _, p in head.named_parameters()]
    logger.log(phase="pretrain", event="start", clips=len(index.clips),
               params=count_parameters(encoder) + count_parameters(head))

    pt = config.pretrain
    epoch_losses = []
    t0 = time.perf_counter()
    for epoch in range(1, pt.epochs + 1):
        order = _stream(config.seed, _S_PRE_ORDER, epoch).permutation(len(index.clips))
        losses = []
        for step, batch_ids in enumerate(_chunks(order, pt.batch_size)):
            if len(batch_ids) < 2:
                # A single-clip batch has no negatives; drop the remainder.
                logger.log(phase="pretrain", epoch=epoch, event="dropped_batch",
                           clips=len(batch_ids))
                continue

            def build(i):
                rng = _stream(config.seed, _S_PRE_AUG, epoch, int(i))
                return _view_pair(index.clips[int(i)], sampler, spatial, rng)

            pairs = _map_workers(build, list(batch_ids), config.num_workers)
            x = np.stack([v for pair in pairs for v in pair])
            ids = [str(index.clips[int(i)].path) for i in batch_ids for _ in (0, 1)]

            z = head(encoder(Tensor(x)))
            batch = assemble_batch(z, ids, tau=config.tau)
            loss = nt_xent(batch)
            zero_grad(params)
            backward(loss)
            sgd_momentum_step(params, pt.lr, pt.momentum, pt.weight_decay)
            losses.append(float(loss.data))
            logger.log(phase="pretrain", epoch=epoch, step=step,
                       loss=losses[-1], lr=pt.lr)
        mean_loss = float(np.mean(losses)) if losses else math.nan
        epoch_losses.append(mean_loss)
        logger.log(phase="pretrain", epoch=epoch, event="epoch_end", loss=mean_loss)
        want_snapshot = epoch in snapshot_epochs or (
            interval and epoch % interval == 0 and epoch < pt.epochs
        )
        if want_snapshot and out is not None:
            ckpt = _pretrain_checkpoint(config, spec, encoder, head, epoch)
            save_checkpoint(ckpt, out / f"pretrain_epoch{epoch:04d}.stck")

    ckpt = _pretrain_checkpoint(config, spec, encoder, head, pt.epochs)
    if out is not None:
        save_checkpoint(ckpt, out / "pretrain.stck")
    logger.log(phase="pretrain", event="done",
               wall_clock=round(time.perf_counter() - t0, 3))
    return ckpt, epoch_losses


def carve_validation(index, fraction, seed):
    """Stratified (fit, val) split of a training index by clips."""
    val = label_subset(index, fraction, seed)
    val_ids = {id(d) for d in val.clips}
    fit = index.with_clips([d for d in index.clips if id(d) not in val_ids])
    if not fit.clips:
        raise ConfigError("validation fraction leaves no training clips")
    return fit, val


def _batch_logits(model, clips, n, output_size, batch_size):
    logits = []
    with no_grad():
        for group in _chunks(clips, batch_size):
            x = np.stack([_eval_array(d, n, output_size) for d in group])
            logits.append(model(Tensor(x)).data.copy())
    return np.concatenate(logits, axis=0)


def evaluate(model, index, n, output_size, batch_size=16):
    """Deterministic-view inference: accuracy, confusion matrix, mean loss."""
    if not index.clips:
        raise ValueError("cannot evaluate on an empty split")
    was_training = model.training
    model.eval()
    t0 = time.perf_counter()
    logits = _batch_logits(model, index.clips, n, output_size, batch_size)
    if was_training:
        model.train()
    labels = np.array([d.label for d in index.clips], dtype=np.int64)
    preds = np.argmax(logits, axis=1)
    c = index.taxonomy.count
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    # Mean cross-entropy with the usual max-subtracted log-sum-exp.
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    mean_loss = float(np.mean(lse - shifted[np.arange(len(labels)), labels]))
    return Metrics(
        accuracy=float(np.trace(confusion) / len(labels)),
        confusion=confusion,
        wall_clock=time.perf_counter() - t0,
        extra={"mean_loss": mean_loss, "count": len(labels)},
    )


def _load_encoder_from(ckpt, spec, expected_prefix="encoder."):
    encoder = build_encoder(spec, rng=_stream(0, _S_ENC_INIT))
    state = {
        k[len(expected_prefix):]: v
        for k, v in ckpt.arrays.items()
        if k.startswith(expected_prefix)
    }
    if not state:
        raise CheckpointError("checkpoint holds no encoder arrays")
    encoder.load_state_arrays(state)
    return encoder


def finetune(config, ckpt, train_index, val_index, out_dir=None, logger=None,
             sampler=None, spatial=None):
    """Linear probe on the frozen encoder, then full training; best-val model.

    One plateau schedule on validation loss spans both phases. Returns
    (classifier, history) where history carries per-epoch records and the
    best epoch.
    """
    logger = logger or RunLogger(None)
    spec = config.encoder_spec()
    if ckpt.encoder_digest != spec.digest():
        raise CheckpointError(
            f"checkpoint architecture {ckpt.encoder_digest[:12]}... does not match "
            f"configured {spec.digest()[:12]}..."
        )
    sampler = sampler or config.sampler_spec()
    spatial = spatial or config.spatial_spec()
    n = sampler.n
    output_size = spatial.output_size
    classes = train_index.taxonomy.count

    encoder = _load_encoder_from(ckpt, spec)
    fc = Dense(spec.embedding_dim, classes, rng=_stream(config.seed, _S_CLS_INIT))
    model = Classifier(encoder, fc)
    ft = config.finetune
    sched = PlateauScheduler(ft.lr, patience=ft.plateau_patience)

    encoder_params = [p for _, p in encoder.named_parameters()]
    fc_params = [p for _, p in fc.named_parameters()]
    for p in encoder_params:
        p.requires_grad = False
    encoder.eval()
    trainable = fc_params
    logger.log(phase="finetune", event="start", classes=classes,
               train_clips=len(train_index.clips), val_clips=len(val_index.clips))

    history = []
    best = None  # (acc, -loss, epoch, arrays)
    total_epochs = ft.linear_epochs + ft.full_epochs
    t0 = time.perf_counter()
    for epoch in range(1, total_epochs + 1):
        if epoch == ft.linear_epochs + 1:
            for p in encoder_params:
                p.requires_grad = True
            encoder.train()
            trainable = encoder_params + fc_params
            logger.log(phase="finetune", event="unfreeze", epoch=epoch)
        elif epoch <= ft.linear_epochs:
            # evaluate() restores train mode on the whole classifier after
            # each validation pass; the frozen encoder must stay in eval so
            # its batchnorm statistics cannot drift during the probe.
            encoder.eval()

        order = _stream(config.seed, _S_FT_ORDER, epoch).permutation(
            len(train_index.clips)
        )
        train_losses = []
        for batch_ids in _chunks(order, ft.batch_size):
            def build(i):
                rng = _stream(config.seed, _S_FT_AUG, epoch, int(i))
                return _train_view(train_index.clips[int(i)], sampler, spatial, rng)

            views = _map_workers(build, list(batch_ids), config.num_workers)
            x = np.stack(views)
            labels = np.array(
                [train_index.clips[int(i)].label for i in batch_ids], dtype=np.int64
            )
            logits = model(Tensor(x))
            loss = softmax_cross_entropy(logits, labels)
            zero_grad(trainable)
            backward(loss)
            adam_step(trainable, lr=sched.lr)
            train_losses.append(float(loss.data))

        val = evaluate(model, val_index, n, output_size, batch_size=ft.batch_size)
        val_loss = val.extra["mean_loss"]
        record = {
            "epoch": epoch,
            "stage": "linear" if epoch <= ft.linear_epochs else "full",
            "train_loss": float(np.mean(train_losses)) if train_losses else math.nan,
            "val_loss": val_loss,
            "val_accuracy": val.accuracy,
            "lr": sched.lr,
        }
        history.append(record)
        logger.log(phase="finetune", **record)
        key = (val.accuracy, -val_loss)
        if best is None or key > best[0]:
            best = (
                key,
                epoch,
                {k: v.copy() for k, v in model.state_arrays().items()},
            )
        sched.step(val_loss)

    model.load_state_arrays(best[2])
    for p in encoder_params:
        p.requires_grad = True
    result = {
        "per_epoch": history,
        "best_epoch": best[1],
        "best_val_accuracy": best[0][0],
        "wall_clock": time.perf_counter() - t0,
    }
    if out_dir is not None:
        model_ckpt = Checkpoint(
            encoder_digest=spec.digest(),
            epoch=best[1],
            arrays=model.state_arrays(),
            scalars={"kind": "classifier", "classes": classes,
                     "preset": config.preset, "variant": config.variant},
        )
        save_checkpoint(model_ckpt, Path(out_dir) / "model.stck")
    logger.log(phase="finetune", event="done", **{
        k: v for k, v in result.items() if k != "per_epoch"})
    return model, result


def load_classifier(ckpt, spec):
    """Rebuild a fine-tuned classifier from its checkpoint."""
    if ckpt.scalars.get("kind") != "classifier":
        raise CheckpointError(
            f"expected a classifier checkpoint, got kind="
            f"{ckpt.scalars.get('kind')!r}"
        )
    if ckpt.encoder_digest != spec.digest():
        raise CheckpointError(
            f"checkpoint architecture {ckpt.encoder_digest[:12]}... does not "
            f"match configured {spec.digest()[:12]}..."
        )
    classes = int(ckpt.scalars["classes"])
    encoder = build_encoder(spec, rng=_stream(0, _S_ENC_INIT))
    fc = Dense(spec.embedding_dim, classes, rng=_stream(0, _S_CLS_INIT))
    model = Classifier(encoder, fc)
    model.load_state_arrays(ckpt.arrays)
    return model


def save_metrics(metrics, out_dir, stem="metrics"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(
        json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    lines = [",".join(str(v) for v in row) for row in metrics.confusion]
    (out / f"{stem}_confusion.csv").write_text("\n".join(lines) + "\n")
    _save_heatmap(metrics.confusion, out / f"{stem}_confusion.png")


def _save_heatmap(confusion, path, cell=24):
    from PIL import Image

    m = confusion.astype(np.float64)
    peak = m.max() if m.max() > 0 else 1.0
    norm = m / peak
    # Dark blue through yellow, nearest-neighbor upscaled per cell.
    rgb = np.stack(
        [norm * 253 + 2, norm * 231 + 24, (1 - norm) * 112 + 30], axis=-1
    ).astype(np.uint8)
    img = Image.fromarray(rgb, "RGB").resize(
        (confusion.shape[1] * cell, confusion.shape[0] * cell), Image.NEAREST
    )
    img.save(path)


def run_kfold(config, index, out_dir=None, logger=None):
    """Subject-grouped k-fold: label-free pretrain, per-fold finetune+eval."""
    logger = logger or RunLogger(None)
    plan = split_folds(index, config.folds, config.seed)
    mode = "shared-pretrain" if config.shared_pretrain else "per-fold-pretrain"
    logger.log(phase="kfold", event="start", folds=config.folds, mode=mode)

    shared_ckpt = None
    if config.shared_pretrain:
        shared_ckpt, _ = pretrain(config, index, out_dir=out_dir, logger=logger)

    fold_metrics = []
    for fold in range(config.folds):
        train_idx, test_idx = split_by_fold(index, plan, fold)
        ckpt = shared_ckpt
        if ckpt is None:
            ckpt, _ = pretrain(config, train_idx, logger=logger)
        train_sub = label_subset(train_idx, config.label_fraction, config.seed)
        fit_idx, val_idx = carve_validation(
            train_sub, config.finetune.val_fraction,
            np.random.SeedSequence([config.seed, _S_VAL_SPLIT, fold]).entropy,
        )
        model, _ = finetune(config, ckpt, fit_idx, val_idx, logger=logger)
        sampler = config.sampler_spec()
        spatial = config.spatial_spec()
        m = evaluate(model, test_idx, sampler.n, spatial.output_size,
                     batch_size=config.finetune.batch_size)
        m.extra["fold"] = fold
        fold_metrics.append(m)
        logger.log(phase="kfold", fold=fold, accuracy=m.accuracy)

    mean_acc = float(np.mean([m.accuracy for m in fold_metrics]))
    result = {
        "mode": mode,
        "per_fold_accuracy": [m.accuracy for m in fold_metrics],
        "mean_accuracy": mean_acc,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = ["fold,accuracy,mode"]
        rows += [f"{i},{m.accuracy:.6f},{mode}" for i, m in enumerate(fold_metrics)]
        rows.append(f"mean,{mean_acc:.6f},{mode}")
        (out / "kfold.csv").write_text("\n".join(rows) + "\n")
        for i, m in enumerate(fold_metrics):
            save_metrics(m, out, stem=f"fold{i}")
    logger.log(phase="kfold", event="done", mean_accuracy=mean_acc)
    return result, fold_metrics


def _val_seed(config, tag=0):
    return np.random.SeedSequence([config.seed, _S_VAL_SPLIT, tag]).entropy


def single_split_cycle(config, index, ckpt, out_dir=None, logger=None,
                       label_fraction=None, sampler=None, spatial=None):
    """Finetune+evaluate on fold 0 of the subject split; returns Metrics."""
    plan = split_folds(index, config.folds, config.seed)
    train_idx, test_idx = split_by_fold(index, plan, 0)
    fraction = config.label_fraction if label_fraction is None else label_fraction
    train_sub = label_subset(train_idx, fraction, config.seed)
    fit_idx, val_idx = carve_validation(
        train_sub, config.finetune.val_fraction, _val_seed(config)
    )
    model, history = finetune(config, ckpt, fit_idx, val_idx, out_dir=out_dir,
                              logger=logger, sampler=sampler, spatial=spatial)
    s = sampler or config.sampler_spec()
    sp = spatial or config.spatial_spec()
    metrics = evaluate(model, test_idx, s.n, sp.output_size,
                       batch_size=config.finetune.batch_size)
    metrics.per_epoch = history["per_epoch"]
    metrics.extra["best_epoch"] = history["best_epoch"]
    return model, metrics
