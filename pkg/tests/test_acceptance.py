"""Top-level acceptance checks, one per criterion, each printing a verdict.

Run with `pytest -s tests/test_acceptance.py` to see the verdict lines as
they complete. Every check also enforces its own wall-clock budget.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from stclr import cli, experiments, trainer
from stclr.augment import (
    SamplerSpec,
    SpatialAugSpec,
    sample_temporal,
    sample_uniform,
    spatial_augment,
)
from stclr.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from stclr.config import RunConfig
from stclr.contrastive import nt_xent
from stclr.encoder import EncoderSpec, architecture_rows, intermediate_channels
from stclr.nn import PlateauScheduler, Tensor
from stclr.nn.gradcheck import DEFAULT_TOLERANCE, run_suite
from stclr.video import (
    LabelTaxonomy,
    SyntheticSpec,
    generate_synthetic,
    label_subset,
    split_by_fold,
    split_folds,
)

from test_contrastive import loss_oracle
from test_encoder import EXPECTED_PAPER_ROWS

# ---------------------------------------------------------------------------
# The end-to-end gate (criterion 6) runs the small preset on 64 synthetic
# clips. Epoch counts follow the scaled protocol (30 pretrain, 5 linear +
# 10 full finetune); the learning rates and batch sizes below were
# calibrated for this desk-scale run.
# ---------------------------------------------------------------------------
GATE_SEED = 0
GATE_DATA = {"classes": 4, "subjects": 8, "videos_per_subject_per_class": 2,
             "frames": 24, "height": 32, "width": 32}
GATE_OVERRIDES = {
    "pretrain": {"epochs": 30, "batch_size": 8, "lr": 0.1},
    "finetune": {"linear_epochs": 5, "full_epochs": 10, "batch_size": 8,
                 "lr": 3e-4},
}


def _verdict(num, label, ok, elapsed, budget, detail=""):
    status = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"criterion {num} ({label}): {status} [{elapsed:.1f}s]"
          + (f" {detail}" if detail else ""))
    assert ok, f"criterion {num}: {detail or label}"
    assert elapsed < budget, f"criterion {num} exceeded {budget}s ({elapsed:.1f}s)"


@pytest.fixture(scope="module")
def gate_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("gate_data")
    generate_synthetic(SyntheticSpec(seed=GATE_SEED, **GATE_DATA), root)
    return root


@pytest.fixture(scope="module")
def gate_index(gate_root):
    from stclr.video import load_dataset

    return load_dataset(gate_root, LabelTaxonomy.of_size(GATE_DATA["classes"]))


def test_criterion_1_architecture_table(capsys):
    t0 = time.perf_counter()
    rows = architecture_rows(EncoderSpec.paper())
    got = [(r["layer"], r["output_size"], r["kernel"], r["repeat"]) for r in rows]
    diffs = [i for i, (g, e) in enumerate(zip(got, EXPECTED_PAPER_ROWS)) if g != tuple(e)]
    ok = len(got) == len(EXPECTED_PAPER_ROWS) and not diffs
    code = cli.main(["arch-dump", "--preset", "paper"])
    dump = capsys.readouterr().out
    ok = ok and code == 0 and "[512, 2, 14, 14]" in dump and "[512, 1, 1, 1]" in dump
    _verdict(1, "architecture table", ok, time.perf_counter() - t0, 5.0,
             detail=f"diff rows: {diffs}" if diffs else "zero diffs")


def test_criterion_2_channel_widths_and_budget():
    t0 = time.perf_counter()
    pairs = [(3, 64, 3, 7), (64, 64, 3, 3), (64, 128, 3, 3), (128, 128, 3, 3),
             (128, 256, 3, 3), (256, 256, 3, 3), (256, 512, 3, 3), (512, 512, 3, 3)]
    widths = {intermediate_channels(*p) for p in pairs}
    expected = {144, 230, 288, 460, 576, 921, 1152}
    ok = expected <= widths

    rng = np.random.default_rng(7)
    holds = 0
    for _ in range(1000):
        m_in = int(rng.integers(2, 513))
        m_out = int(rng.integers(2, 513))
        t = int(rng.choice([3, 5]))
        d = int(rng.choice([3, 5, 7]))
        n = intermediate_channels(m_in, m_out, t, d)
        budget = t * d * d * m_in * m_out
        cost = lambda k: k * (d * d * m_in + t * m_out)
        holds += cost(n) <= budget < cost(n + 1)
    ok = ok and holds == 1000
    _verdict(2, "width formula and budget", ok, time.perf_counter() - t0, 1.0,
             detail=f"widths {sorted(widths & expected)}, budget holds {holds}/1000")


def test_criterion_3_loss_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 17))
        dim = int(rng.integers(2, 65))
        tau = float(rng.uniform(0.1, 1.0))
        z = rng.normal(size=(2 * n, dim))
        got = float(nt_xent(Tensor(z), tau=tau).data)
        worst = max(worst, abs(got - loss_oracle(z, tau)))
    single = abs(float(nt_xent(Tensor(rng.normal(size=(2, 8)))).data))
    z4 = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    analytic = abs(float(nt_xent(Tensor(z4), tau=0.5).data)
                   - (-math.log(math.exp(2) / (math.exp(2) + 2))))
    ok = worst < 1e-6 and single < 1e-6 and analytic < 1e-6
    _verdict(3, "contrastive loss oracle", ok, time.perf_counter() - t0, 10.0,
             detail=f"max |diff| {worst:.2e}, N=1 {single:.2e}, N=2 {analytic:.2e}")


def test_criterion_4_gradient_suite():
    t0 = time.perf_counter()
    report = run_suite(seed=0, include_composite=True)
    worst_name = max(report, key=report.get)
    ok = all(err < DEFAULT_TOLERANCE for err in report.values())
    _verdict(4, "finite-difference gradients", ok, time.perf_counter() - t0, 300.0,
             detail=f"worst {worst_name} {report[worst_name]:.2e} over {len(report)} checks")


def test_criterion_5_augmentation_invariants():
    t0 = time.perf_counter()
    from stclr.video import VideoClip

    rng = np.random.default_rng(5)
    frames = rng.random((24, 16, 16, 3)).astype(np.float32)
    clip = VideoClip(frames=frames, subject_id="s0", label=0)
    problems = []

    for strategy in ("pure_random", "uniform", "sequential"):
        spec = SamplerSpec(n=8, strategy=strategy)
        for trial in range(50):
            idx = sample_temporal(clip, spec, np.random.default_rng(trial))
            if idx.min() < 0 or idx.max() >= 24 or len(idx) != 8:
                problems.append(f"{strategy} bounds")
            if strategy == "uniform" and (idx[0] != 0 or idx[-1] != 23):
                problems.append("uniform endpoints")
            if strategy == "sequential" and not np.array_equal(
                    idx, np.arange(idx[0], idx[0] + 8)):
                problems.append("sequential contiguity")

    # Strategy mix: classify 30k random_choice draws.
    uniform_ref = sample_uniform(24, 8)
    counts = {"uniform": 0, "sequential": 0, "pure_random": 0}
    mix = SamplerSpec(n=8, strategy="random_choice")
    draw_rng = np.random.default_rng(99)
    for _ in range(30_000):
        idx = sample_temporal(clip, mix, draw_rng)
        if np.array_equal(idx, uniform_ref):
            counts["uniform"] += 1
        elif np.array_equal(idx, np.arange(idx[0], idx[0] + 8)):
            counts["sequential"] += 1
        else:
            counts["pure_random"] += 1
    freqs = {k: v / 30_000 for k, v in counts.items()}
    if any(abs(f - 1 / 3) > 0.02 for f in freqs.values()):
        problems.append(f"strategy mix {freqs}")

    # Frame consistency: identical input frames stay identical bitwise.
    spat = SpatialAugSpec(output_size=(12, 12))
    dup = np.repeat(frames[:1], 6, axis=0)
    out, _ = spatial_augment(dup, spat, np.random.default_rng(4))
    if not all(np.array_equal(out[0], out[k]) for k in range(1, 6)):
        problems.append("frame consistency")

    # Determinism under seed.
    a, pa = spatial_augment(frames[:6], spat, np.random.default_rng(12))
    b, pb = spatial_augment(frames[:6], spat, np.random.default_rng(12))
    ia = sample_temporal(clip, mix, np.random.default_rng(12))
    ib = sample_temporal(clip, mix, np.random.default_rng(12))
    if not (np.array_equal(a, b) and pa == pb and np.array_equal(ia, ib)):
        problems.append("seed determinism")

    _verdict(5, "augmentation invariants", not problems,
             time.perf_counter() - t0, 120.0,
             detail=f"mix {freqs}" if not problems else "; ".join(sorted(set(problems))))


def test_criterion_7_protocol_machinery(gate_index, tmp_path):
    t0 = time.perf_counter()
    problems = []

    # Fold invariants: disjoint subject-grouped cover, deterministic.
    plan = split_folds(gate_index, 4, seed=1)
    seen = []
    for fold in range(4):
        train, test = split_by_fold(gate_index, plan, fold)
        seen.extend(d.path for d in test.clips)
        overlap = {d.subject_id for d in train.clips} & {d.subject_id for d in test.clips}
        if overlap:
            problems.append(f"fold {fold} shares subjects {overlap}")
        if len(train.clips) + len(test.clips) != len(gate_index.clips):
            problems.append(f"fold {fold} not a partition")
    if sorted(seen) != sorted(d.path for d in gate_index.clips):
        problems.append("folds do not cover the dataset")
    plan2 = split_folds(gate_index, 4, seed=1)
    if plan.assignments != plan2.assignments:
        problems.append("fold split not deterministic")

    # Label subsets: per-class stratified counts, round half up, min 1.
    for fraction in (0.75, 0.5, 0.25, 0.10):
        sub = label_subset(gate_index, fraction, seed=2)
        labels = [d.label for d in gate_index.clips]
        for cls in sorted(set(labels)):
            have = sum(1 for d in sub.clips if d.label == cls)
            want = max(1, int(math.floor(labels.count(cls) * fraction + 0.5)))
            if have != want:
                problems.append(f"fraction {fraction} class {cls}: {have} != {want}")

    # Plateau decay: three flat epochs then a x0.1 drop.
    sched = PlateauScheduler(0.1, factor=0.1, patience=3)
    lrs = [sched.step(1.0) for _ in range(4)]
    if lrs[:3] != [0.1, 0.1, 0.1] or abs(lrs[3] - 0.01) > 1e-12:
        problems.append(f"plateau sequence {lrs}")

    # Linear-probe freeze: encoder arrays bit-identical through 30 epochs.
    probe_cfg = RunConfig.from_dict({
        "seed": 5, "preset": "tiny", "out_dir": str(tmp_path), "folds": 4,
        "data": {"synthetic": GATE_DATA},
        "pretrain": {"epochs": 1, "batch_size": 8},
        "finetune": {"linear_epochs": 30, "full_epochs": 0, "batch_size": 8},
    })
    index = trainer.resolve_dataset(probe_cfg, tmp_path)
    ckpt, _ = trainer.pretrain(probe_cfg, index)
    train_idx, _ = split_by_fold(index, split_folds(index, 4, 5), 0)
    fit, val = trainer.carve_validation(train_idx, 0.25, seed=6)
    model, _ = trainer.finetune(probe_cfg, ckpt, fit, val)
    before = {k: v for k, v in ckpt.arrays.items() if k.startswith("encoder.")}
    after = trainer._module_arrays("encoder.", model.encoder)
    frozen = all(np.array_equal(before[k], after[k]) for k in before)
    if not frozen:
        moved = [k for k in before if not np.array_equal(before[k], after[k])]
        problems.append(f"encoder moved during linear probe: {moved[:3]}")

    # Checkpoint round trip: bytes and arrays both exact.
    path = tmp_path / "roundtrip.stck"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    same_arrays = all(np.array_equal(ckpt.arrays[k], loaded.arrays[k])
                      for k in ckpt.arrays) and ckpt.arrays.keys() == loaded.arrays.keys()
    path2 = tmp_path / "roundtrip2.stck"
    save_checkpoint(loaded, path2)
    if not (same_arrays and path.read_bytes() == path2.read_bytes()):
        problems.append("checkpoint round trip not exact")

    _verdict(7, "protocol machinery", not problems, time.perf_counter() - t0,
             300.0, detail="; ".join(problems) if problems else "folds, subsets, plateau, freeze, round-trip")


def test_criterion_8_determinism(tmp_path):
    t0 = time.perf_counter()
    data_dir = tmp_path / "data"
    code = cli.main(["gen-data", "--out", str(data_dir), "--seed", "3",
                     "--classes", "2", "--subjects", "4", "--videos", "1",
                     "--frames", "10", "--height", "32", "--width", "32"])
    assert code == 0

    def run(out_name):
        out = tmp_path / out_name
        rc = cli.main(["pretrain", "--data", str(data_dir), "--out", str(out),
                       "--seed", "11", "--preset", "tiny", "--epochs", "2",
                       "--batch-size", "4", "--deterministic"])
        assert rc == 0
        return (out / "pretrain.stck").read_bytes()

    first = run("run_a")
    second = run("run_b")
    identical = first == second

    # Corrupt every label via the override file; bytes must not change.
    clips = sorted(p.relative_to(data_dir) for p in data_dir.glob("*/*") if p.is_dir())
    names = ["Sad", "Happy"]
    with open(data_dir / "labels.csv", "w") as fh:
        fh.write("path,subject_id,label\n")
        for i, rel in enumerate(clips):
            subject = rel.name.rsplit("_", 1)[0]
            fh.write(f"{rel},{subject},{names[i % 2]}\n")
    third = run("run_c")
    blind = first == third

    ok = identical and blind
    _verdict(8, "bit determinism and label blindness", ok,
             time.perf_counter() - t0, 600.0,
             detail=f"rerun identical: {identical}, label-blind: {blind}")


def test_criterion_6_learning_gate(gate_index, tmp_path):
    t0 = time.perf_counter()
    cfg_dict = {
        "seed": GATE_SEED, "preset": "tiny", "out_dir": str(tmp_path),
        "folds": 4, "data": {"synthetic": GATE_DATA},
    }
    cfg_dict.update(GATE_OVERRIDES)
    cfg = RunConfig.from_dict(cfg_dict)
    rows = experiments.run_ablation(
        cfg, gate_index, out_dir=tmp_path,
        rows=[("all", {}), ("no_temporal", {"temporal": False})],
    )
    acc = {r["name"]: r["accuracy"] for r in rows}
    ok = acc["all"] >= 0.50 and acc["no_temporal"] <= acc["all"] + 0.05
    _verdict(6, "end-to-end learning gate", ok, time.perf_counter() - t0,
             1800.0, detail=f"all {acc['all']:.3f}, no_temporal {acc['no_temporal']:.3f}")
