"""Command line entry point.

Precedence for every setting: explicit flag, then --config file, then the
built-in default. The resolved configuration is echoed to
<out>/config.json before any training command runs, so a run directory
always records exactly what produced it. Progress goes to stderr, results
to stdout. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import RunConfig
from .encoder import (
    EncoderSpec,
    architecture_rows,
    count_parameters,
    format_architecture,
)
from .errors import StclrError
from .nn.gradcheck import DEFAULT_TOLERANCE, run_suite
from .video import SyntheticSpec, generate_synthetic
from . import experiments, trainer

_WORKERS_ENV = "STCLR_NUM_WORKERS"


def _add_common(p, training=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="run directory")
    if training:
        p.add_argument("--preset", choices=("paper", "tiny"))
        p.add_argument("--variant", choices=("r2plus1d", "full3d", "mixed"))
        p.add_argument("--epochs", type=int, help="pretraining epochs")
        p.add_argument("--batch-size", type=int, help="pretraining batch size")
        p.add_argument("--tau", type=float, help="softmax temperature")
        p.add_argument("--deterministic", action="store_true",
                       help="single worker, bit-reproducible runs")
        p.add_argument("--num-workers", type=int,
                       help=f"view-building threads (default ${_WORKERS_ENV} or 1)")
        p.add_argument("--data", help="dataset root (skip synthetic generation)")
        p.add_argument("--linear-epochs", type=int,
                       help="frozen-encoder fine-tuning epochs")
        p.add_argument("--full-epochs", type=int,
                       help="full-network fine-tuning epochs")
        p.add_argument("--folds", type=int, help="cross-validation folds")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stclr",
        description="Self-supervised video representation learning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic clip dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--videos", type=int, default=2,
                   help="videos per subject per class")
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=0.05,
                   help="per-frame sensor noise level")

    _add_common(sub.add_parser("pretrain", help="contrastive pretraining"))
    p = sub.add_parser("finetune", help="two-phase supervised fine-tuning")
    _add_common(p)
    p.add_argument("--checkpoint", help="pretraining checkpoint (.stck)")
    p = sub.add_parser("eval", help="evaluate a fine-tuned model")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.stck)")
    _add_common(sub.add_parser("kfold", help="subject-grouped cross-validation"))
    _add_common(sub.add_parser("ablate", help="augmentation ablation table"))
    p = sub.add_parser("epoch-study", help="accuracy vs pretraining length")
    _add_common(p)
    p.add_argument("--epochs-list", required=True,
                   help="comma-separated pretraining epochs to probe")
    p = sub.add_parser("partial-labels", help="accuracy vs labeled fraction")
    _add_common(p)
    p.add_argument("--fractions", default="1.0,0.75,0.5,0.25,0.1",
                   help="comma-separated label fractions")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fast", action="store_true",
                   help="skip the composite encoder check")

    p = sub.add_parser("arch-dump", help="print the layer table for a preset")
    p.add_argument("--preset", default="paper", choices=("paper", "tiny"))
    p.add_argument("--variant", default="r2plus1d",
                   choices=("r2plus1d", "full3d", "mixed"))
    return parser


def _set_path(merged, path, value):
    if value is None or value is False:
        return
    node = merged
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def resolve_config(args):
    """Merge --config file and explicit flags into a validated RunConfig."""
    merged = {}
    if getattr(args, "config", None):
        merged = json.loads(Path(args.config).read_text())
        if not isinstance(merged, dict):
            raise StclrError(f"config {args.config} must hold a JSON object")
    flag_map = {
        "seed": ("seed",),
        "out": ("out_dir",),
        "preset": ("preset",),
        "variant": ("variant",),
        "tau": ("tau",),
        "deterministic": ("deterministic",),
        "num_workers": ("num_workers",),
        "data": ("data", "root"),
        "epochs": ("pretrain", "epochs"),
        "batch_size": ("pretrain", "batch_size"),
        "linear_epochs": ("finetune", "linear_epochs"),
        "full_epochs": ("finetune", "full_epochs"),
        "folds": ("folds",),
    }
    for attr, path in flag_map.items():
        _set_path(merged, path, getattr(args, attr, None))
    env_workers = os.environ.get(_WORKERS_ENV)
    if env_workers and getattr(args, "num_workers", None) is None \
            and "num_workers" not in merged:
        merged["num_workers"] = int(env_workers)
    return RunConfig.from_dict(merged)


def _prepare(args):
    config = resolve_config(args)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / "config.json")
    logger = trainer.RunLogger(out / "events.jsonl")
    print(f"run directory: {out}", file=sys.stderr)
    index = trainer.resolve_dataset(config, out)
    print(f"dataset: {len(index.clips)} clips, "
          f"{index.taxonomy.count} classes", file=sys.stderr)
    return config, out, logger, index


def _cmd_gen_data(args):
    spec = SyntheticSpec(
        classes=args.classes, subjects=args.subjects,
        videos_per_subject_per_class=args.videos, frames=args.frames,
        height=args.height, width=args.width,
        noise_sigma=args.noise_sigma, seed=args.seed,
    )
    index = generate_synthetic(spec, args.out)
    print(f"wrote {len(index.clips)} clips to {args.out}")
    return 0


def _cmd_pretrain(args):
    config, out, logger, index = _prepare(args)
    with logger:
        _, losses = trainer.pretrain(config, index, out_dir=out, logger=logger)
    print(f"pretrained {config.pretrain.epochs} epochs, "
          f"final loss {losses[-1]:.4f}")
    print(f"checkpoint: {out / 'pretrain.stck'}")
    return 0


def _cmd_finetune(args):
    config, out, logger, index = _prepare(args)
    ckpt_path = args.checkpoint or out / "pretrain.stck"
    ckpt = load_checkpoint(ckpt_path)
    with logger:
        _, metrics = trainer.single_split_cycle(
            config, index, ckpt, out_dir=out, logger=logger
        )
    trainer.save_metrics(metrics, out)
    print(f"held-out accuracy {metrics.accuracy:.4f} "
          f"(best epoch {metrics.extra['best_epoch']})")
    print(f"model: {out / 'model.stck'}")
    return 0


def _cmd_eval(args):
    config, out, logger, index = _prepare(args)
    ckpt = load_checkpoint(args.checkpoint)
    model = trainer.load_classifier(ckpt, config.encoder_spec())
    sampler = config.sampler_spec()
    spatial = config.spatial_spec()
    with logger:
        metrics = trainer.evaluate(model, index, sampler.n, spatial.output_size,
                                   batch_size=config.finetune.batch_size)
        logger.log(phase="eval", accuracy=metrics.accuracy,
                   clips=len(index.clips))
    trainer.save_metrics(metrics, out, stem="eval")
    print(f"accuracy {metrics.accuracy:.4f} on {len(index.clips)} clips")
    return 0


def _cmd_kfold(args):
    config, out, logger, index = _prepare(args)
    with logger:
        result, _ = trainer.run_kfold(config, index, out_dir=out, logger=logger)
    for fold, acc in enumerate(result["per_fold_accuracy"]):
        print(f"fold {fold}: accuracy {acc:.4f}")
    print(f"mean accuracy {result['mean_accuracy']:.4f} ({result['mode']})")
    return 0


def _cmd_ablate(args):
    config, out, logger, index = _prepare(args)
    with logger:
        rows = experiments.run_ablation(config, index, out_dir=out, logger=logger)
    for r in rows:
        marks = " ".join(
            f"{k}={'on' if r[k] else 'off'}"
            for k in ("temporal", "crop", "color", "flip")
        )
        print(f"{r['name']:<12} {marks}  accuracy {r['accuracy']:.4f}")
    return 0


def _cmd_epoch_study(args):
    config, out, logger, index = _prepare(args)
    epochs_list = [int(x) for x in args.epochs_list.split(",") if x.strip()]
    with logger:
        rows = experiments.run_epoch_study(config, epochs_list, index,
                                           out_dir=out, logger=logger)
    for r in rows:
        print(f"pretrain epochs {r['epochs']:>4}: accuracy {r['accuracy']:.4f}")
    return 0


def _cmd_partial_labels(args):
    config, out, logger, index = _prepare(args)
    fractions = [float(x) for x in args.fractions.split(",") if x.strip()]
    with logger:
        rows = experiments.run_partial_label_study(config, fractions, index,
                                                   out_dir=out, logger=logger)
    for r in rows:
        print(f"fraction {r['fraction']:>5.2f} ({r['labeled_clips']} clips): "
              f"accuracy {r['accuracy']:.4f}")
    return 0


def _cmd_gradcheck(args):
    results = run_suite(seed=args.seed, include_composite=not args.fast)
    worst = 0.0
    failed = []
    for name, err in results.items():
        ok = err < DEFAULT_TOLERANCE
        worst = max(worst, err)
        print(f"{name:<24} {err:12.3e}  {'pass' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    print(f"worst relative error {worst:.3e} (tolerance {DEFAULT_TOLERANCE:.0e})")
    return 1 if failed else 0


def _cmd_arch_dump(args):
    spec = EncoderSpec.preset_named(args.preset, args.variant)
    rows = architecture_rows(spec)
    print(format_architecture(rows))
    from .nn import no_grad

    with no_grad():
        from .encoder import build_encoder, build_projection

        encoder = build_encoder(spec)
        head = build_projection(spec)
        enc = count_parameters(encoder)
        proj = count_parameters(head)
        print(f"encoder parameters: {enc:,}")
        print(f"projection parameters: {proj:,}")
        print(f"total: {enc + proj:,}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "kfold": _cmd_kfold,
    "ablate": _cmd_ablate,
    "epoch-study": _cmd_epoch_study,
    "partial-labels": _cmd_partial_labels,
    "gradcheck": _cmd_gradcheck,
    "arch-dump": _cmd_arch_dump,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except (StclrError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
