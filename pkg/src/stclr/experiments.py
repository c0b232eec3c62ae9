"""Study runners: augmentation ablation, epoch sweep, partial-label sweep.

Each runner pretrains as needed, reuses one subject-grouped split for every
row so rows differ only in the quantity under study, and writes a small CSV
next to the run logs.
"""

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .trainer import RunLogger, load_checkpoint, pretrain, single_split_cycle
from .video import label_subset, split_by_fold, split_folds

_TOGGLES = ("temporal", "crop", "color", "flip")

DEFAULT_ABLATION_ROWS = (
    ("all", {}),
    ("no_temporal", {"temporal": False}),
    ("no_crop", {"crop": False}),
    ("no_color", {"color": False}),
    ("no_flip", {"flip": False}),
)


def _row_specs(config, toggles):
    """Sampler/spatial overrides for one ablation row."""
    unknown = set(toggles) - set(_TOGGLES)
    if unknown:
        raise ConfigError(f"unknown ablation toggles {sorted(unknown)}")
    on = {name: bool(toggles.get(name, True)) for name in _TOGGLES}
    if not any(on.values()):
        raise ConfigError(
            "all augmentations disabled: both views of a clip would be "
            "identical and the contrastive task degenerates"
        )
    sampler = config.sampler_spec()
    spatial = config.spatial_spec()
    if not on["temporal"]:
        sampler = dataclasses.replace(sampler, strategy="uniform")
    if not on["crop"]:
        spatial = dataclasses.replace(spatial, crop_area_range=(1.0, 1.0))
    if not on["color"]:
        spatial = dataclasses.replace(
            spatial, brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0
        )
    if not on["flip"]:
        spatial = dataclasses.replace(spatial, flip_probability=0.0)
    return on, sampler, spatial


def run_ablation(config, index, out_dir=None, logger=None, rows=None):
    """Train once per row with one augmentation family switched off."""
    logger = logger or RunLogger(None)
    rows = DEFAULT_ABLATION_ROWS if rows is None else rows
    results = []
    for name, toggles in rows:
        on, sampler, spatial = _row_specs(config, toggles)
        logger.log(phase="ablation", event="row_start", row=name, **on)
        ckpt, _ = pretrain(config, index, logger=logger,
                           sampler=sampler, spatial=spatial)
        _, metrics = single_split_cycle(config, index, ckpt, logger=logger,
                                        sampler=sampler, spatial=spatial)
        result = dict(name=name, **on, accuracy=metrics.accuracy)
        results.append(result)
        logger.log(phase="ablation", event="row_done", row=name,
                   accuracy=metrics.accuracy)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["name," + ",".join(_TOGGLES) + ",accuracy"]
        for r in results:
            marks = ",".join("✓" if r[t] else "✗" for t in _TOGGLES)
            lines.append(f"{r['name']},{marks},{r['accuracy']:.6f}")
        (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return results


def run_epoch_study(config, epochs_list, index, out_dir=None, logger=None):
    """Accuracy after fine-tuning from snapshots at several pretrain depths.

    One pretrain pass produces every snapshot; each requested epoch must not
    exceed the configured pretrain length.
    """
    logger = logger or RunLogger(None)
    epochs_list = [int(e) for e in epochs_list]
    for e in epochs_list:
        if not 1 <= e <= config.pretrain.epochs:
            raise ValueError(
                f"epoch {e} outside the pretraining run (1..{config.pretrain.epochs})"
            )
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wanted = sorted(set(epochs_list))
    pretrain(config, index, out_dir=out, logger=logger, snapshot_epochs=wanted)

    results = []
    for e in wanted:
        snap = out / f"pretrain_epoch{e:04d}.stck"
        if not snap.exists():
            snap = out / "pretrain.stck"
        ckpt = load_checkpoint(snap)
        _, metrics = single_split_cycle(config, index, ckpt, logger=logger)
        results.append({"epochs": e, "accuracy": metrics.accuracy})
        logger.log(phase="epoch_study", epochs=e, accuracy=metrics.accuracy)
    lines = ["pretrain_epochs,accuracy"]
    lines += [f"{r['epochs']},{r['accuracy']:.6f}" for r in results]
    (out / "epoch_study.csv").write_text("\n".join(lines) + "\n")
    return results


def run_partial_label_study(config, fractions, index, out_dir=None, logger=None):
    """Accuracy when only a fraction of training labels may be used.

    Pretraining is label-free, so one pass serves every fraction; only the
    fine-tuning pool shrinks.
    """
    logger = logger or RunLogger(None)
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"label fraction {f} outside (0, 1]")
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, _ = pretrain(config, index, out_dir=out, logger=logger)

    plan = split_folds(index, config.folds, config.seed)
    train_idx, _ = split_by_fold(index, plan, 0)
    results = []
    for f in fractions:
        labeled = len(label_subset(train_idx, f, config.seed).clips)
        _, metrics = single_split_cycle(config, index, ckpt, logger=logger,
                                        label_fraction=f)
        results.append({"fraction": f, "labeled_clips": labeled,
                        "accuracy": metrics.accuracy})
        logger.log(phase="partial_labels", fraction=f, labeled_clips=labeled,
                   accuracy=metrics.accuracy)
    lines = ["fraction,labeled_clips,accuracy"]
    lines += [f"{r['fraction']},{r['labeled_clips']},{r['accuracy']:.6f}"
              for r in results]
    (out / "partial_labels.csv").write_text("\n".join(lines) + "\n")
    return results
