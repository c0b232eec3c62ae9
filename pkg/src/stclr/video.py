"""Video data model, dataset IO, synthetic generation, and protocol splits.

On-disk layout: `<root>/<class_name>/<subject_id>_<video_id>/frame_00000.png`
(PNG only; the part after the last underscore is the video id). An optional
`labels.csv` with columns `path,subject_id,label` overrides values derived
from directory names. The synthetic generator writes the same layout plus a
`gen_params.csv` audit log.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DatasetError, EmptyDatasetError, TaxonomyError

FRAME_PATTERN = "frame_*.png"

DEFAULT_CLASS_NAMES = ("Happy", "Sad", "Surprised", "Angry", "Fear", "Disgust")


@dataclass(frozen=True)
class LabelTaxonomy:
    class_names: Tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.class_names)
        object.__setattr__(self, "class_names", names)
        if len(set(names)) != len(names):
            raise TaxonomyError(f"duplicate class names: {names}")
        if not names:
            raise TaxonomyError("taxonomy needs at least one class")

    @classmethod
    def default(cls):
        return cls(DEFAULT_CLASS_NAMES)

    @classmethod
    def of_size(cls, count):
        """First `count` default names, then generated ones."""
        if count <= len(DEFAULT_CLASS_NAMES):
            return cls(DEFAULT_CLASS_NAMES[:count])
        extra = tuple(
            f"Class{i}" for i in range(len(DEFAULT_CLASS_NAMES), count)
        )
        return cls(DEFAULT_CLASS_NAMES + extra)

    @property
    def count(self):
        return len(self.class_names)

    def index(self, name):
        try:
            return self.class_names.index(name)
        except ValueError:
            raise TaxonomyError(
                f"label {name!r} not in taxonomy {self.class_names}"
            ) from None

    def name(self, index):
        if not 0 <= index < self.count:
            raise TaxonomyError(f"label index {index} out of range [0,{self.count})")
        return self.class_names[index]


@dataclass
class VideoClip:
    """Materialized frames plus metadata; the unit of sampling and training."""

    frames: np.ndarray  # [L, H, W, 3] float32 in [0, 1]
    subject_id: str
    label: int
    source_path: Optional[str] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DatasetError(
                f"frames must be [L,H,W,3], got {self.frames.shape}"
                + (f" at {self.source_path}" if self.source_path else "")
            )
        if self.frames.shape[0] < 1:
            raise DatasetError("a clip needs at least one frame")
        if self.frames.min() < 0 or self.frames.max() > 1:
            raise DatasetError("pixel values must lie in [0,1]")

    @property
    def frame_count(self):
        return int(self.frames.shape[0])


@dataclass
class ClipDescriptor:
    """Index entry; frames decode lazily via load()."""

    path: Path
    subject_id: str
    label: int
    frame_count: int
    _clip: Optional[VideoClip] = field(default=None, repr=False, compare=False)

    def load(self, cache=True):
        if self._clip is not None:
            return self._clip
        frames = _decode_frames(self.path)
        clip = VideoClip(
            frames=frames,
            subject_id=self.subject_id,
            label=self.label,
            source_path=str(self.path),
        )
        if cache:
            self._clip = clip
        return clip


@dataclass
class DatasetIndex:
    clips: List[ClipDescriptor]
    taxonomy: LabelTaxonomy
    root: Optional[Path] = None

    def __post_init__(self):
        for d in self.clips:
            if not 0 <= d.label < self.taxonomy.count:
                raise TaxonomyError(
                    f"clip {d.path} has label {d.label} outside [0,{self.taxonomy.count})"
                )

    def __len__(self):
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)

    def subjects(self):
        return sorted({d.subject_id for d in self.clips})

    def with_clips(self, clips):
        return DatasetIndex(clips=list(clips), taxonomy=self.taxonomy, root=self.root)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: Dict[str, int]

    def __post_init__(self):
        for subject, fold in self.assignments.items():
            if not 0 <= fold < self.k:
                raise ValueError(f"subject {subject!r} assigned to fold {fold} >= k={self.k}")

    def subjects_in_fold(self, fold):
        return sorted(s for s, f in self.assignments.items() if f == fold)


def _decode_frames(video_dir):
    video_dir = Path(video_dir)
    files = sorted(video_dir.glob(FRAME_PATTERN))
    if not files:
        raise DatasetError(f"no frame images in {video_dir}")
    frames = []
    for f in files:
        try:
            with Image.open(f) as img:
                frames.append(
                    np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
                )
        except DatasetError:
            raise
        except Exception as exc:
            raise DatasetError(f"cannot decode frame {f}: {exc}") from exc
    shapes = {a.shape for a in frames}
    if len(shapes) != 1:
        raise DatasetError(f"frames in {video_dir} disagree on size: {sorted(shapes)}")
    return np.stack(frames)


def _write_frames(video_dir, frames):
    video_dir = Path(video_dir)
    video_dir.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(frames, dtype=np.float32), 0.0, 1.0)
    for t in range(arr.shape[0]):
        img = Image.fromarray(np.round(arr[t] * 255.0).astype(np.uint8))
        img.save(video_dir / f"frame_{t:05d}.png")


def load_dataset(root_dir, taxonomy=None):
    """Index every `<class>/<subject>_<video>` directory under root_dir."""
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    taxonomy = taxonomy or LabelTaxonomy.default()
    clips = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        label = taxonomy.index(class_dir.name)
        for video_dir in sorted(p for p in class_dir.iterdir() if p.is_dir()):
            n_frames = len(list(video_dir.glob(FRAME_PATTERN)))
            if n_frames == 0:
                raise DatasetError(f"no frame images in {video_dir}")
            subject_id, sep, _ = video_dir.name.rpartition("_")
            if not sep:
                subject_id = video_dir.name
            clips.append(
                ClipDescriptor(
                    path=video_dir,
                    subject_id=subject_id,
                    label=label,
                    frame_count=n_frames,
                )
            )
    if not clips:
        raise EmptyDatasetError(f"no videos found under {root}")
    _apply_label_overrides(root, clips, taxonomy)
    return DatasetIndex(clips=clips, taxonomy=taxonomy, root=root)


def _apply_label_overrides(root, clips, taxonomy):
    csv_path = root / "labels.csv"
    if not csv_path.exists():
        return
    by_rel = {str(d.path.relative_to(root)): d for d in clips}
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "subject_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DatasetError(
                f"{csv_path} must have columns path,subject_id,label"
            )
        for row in reader:
            rel = row["path"].strip().strip("/")
            d = by_rel.get(rel)
            if d is None:
                raise DatasetError(f"{csv_path} references missing video {rel!r}")
            d.subject_id = row["subject_id"].strip()
            raw = row["label"].strip()
            try:
                label = int(raw)
            except ValueError:
                label = taxonomy.index(raw)
            if not 0 <= label < taxonomy.count:
                raise TaxonomyError(
                    f"{csv_path}: label {label} out of range for {rel!r}"
                )
            d.label = label


def write_dataset(index, root_dir):
    """Materialize an index to the standard on-disk layout; returns the root."""
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    for i, d in enumerate(index.clips):
        clip = d.load(cache=False)
        class_dir = root / index.taxonomy.name(d.label)
        _write_frames(class_dir / f"{d.subject_id}_v{i:04d}", clip.frames)
    return root


@dataclass
class SyntheticSpec:
    classes: int = 4
    subjects: int = 8
    videos_per_subject_per_class: int = 2
    frames: int = 24
    height: int = 32
    width: int = 32
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("classes", "subjects", "videos_per_subject_per_class", "frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.height < 1 or self.width < 1:
            raise ValueError("frame dimensions must be positive")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _hsv_scalar_to_rgb(h):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    v, s = 1.0, 0.85
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)
    ][i]


def _render_blob_video(spec, angle, freq, speed, hue, radius, start, phase,
                       noise_seed):
    """Gaussian blob drifting along `angle`, radius pulsing at `freq`.

    Each frame gets its own sensor-noise field, so two renders of the same
    frame index match pixel for pixel but no two distinct frames do. That
    pixel fingerprint makes "same frames, different look" pairs solvable by
    texture matching alone, while pairs drawn from different time windows
    still require the stable content (motion and appearance) to agree.
    """
    H, W, L = spec.height, spec.width, spec.frames
    rows = np.arange(H, dtype=np.float32)[:, None]
    cols = np.arange(W, dtype=np.float32)[None, :]
    color = np.array(_hsv_scalar_to_rgb(hue % 1.0), dtype=np.float32)
    vy, vx = speed * math.sin(angle), speed * math.cos(angle)
    nrng = np.random.default_rng(np.random.SeedSequence(noise_seed))
    frames = np.empty((L, H, W, 3), dtype=np.float32)
    for t in range(L):
        cy = (start[0] + vy * t) % H
        cx = (start[1] + vx * t) % W
        r_t = radius * (1.0 + 0.35 * math.sin(2 * math.pi * freq * t / L + phase))
        # Toroidal distances so the blob re-enters smoothly at edges.
        dy = np.minimum(np.abs(rows - cy), H - np.abs(rows - cy))
        dx = np.minimum(np.abs(cols - cx), W - np.abs(cols - cx))
        sigma = max(0.5, r_t / 2.0)
        blob = np.exp(-(dy**2 + dx**2) / (2.0 * sigma**2)).astype(np.float32)
        frames[t] = 0.12 + blob[..., None] * color * 0.85
        if spec.noise_sigma > 0:
            frames[t] += nrng.normal(0.0, spec.noise_sigma, size=(H, W, 3))
    return np.clip(frames, 0.0, 1.0)


def generate_synthetic(spec, root_dir):
    """Write a deterministic synthetic dataset; class identity lives in the
    motion (drift direction + pulse frequency), not in any single frame.

    Per-subject nuisance: base hue, blob radius, base start position.
    Per-frame nuisance: a sensor-noise field unique to each (clip, frame).
    Every clip's parameters are logged to `gen_params.csv` for audit.
    """
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    taxonomy = LabelTaxonomy.of_size(spec.classes)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))

    class_params = []
    for ci in range(spec.classes):
        class_params.append(
            {
                "angle": 2.0 * math.pi * ci / spec.classes + math.pi / 7,
                "freq": 1.0 + (ci % 3),
                "speed": 1.5,
            }
        )
    subject_params = []
    for si in range(spec.subjects):
        subject_params.append(
            {
                "hue": float(rng.uniform(0, 1)),
                "radius": float(rng.uniform(3.0, 5.0) * min(spec.height, spec.width) / 32.0),
                "base_row": float(rng.uniform(0, spec.height)),
                "base_col": float(rng.uniform(0, spec.width)),
            }
        )

    clips = []
    log_rows = []
    for ci in range(spec.classes):
        cp = class_params[ci]
        class_dir = root / taxonomy.name(ci)
        for si in range(spec.subjects):
            sp = subject_params[si]
            subject_id = f"s{si:02d}"
            for vi in range(spec.videos_per_subject_per_class):
                jitter = rng.uniform(-2.0, 2.0, size=2)
                phase = float(rng.uniform(0, 2 * math.pi))
                noise_seed = int(rng.integers(0, 2**31))
                start = (sp["base_row"] + jitter[0], sp["base_col"] + jitter[1])
                frames = _render_blob_video(
                    spec, cp["angle"], cp["freq"], cp["speed"],
                    sp["hue"], sp["radius"], start, phase, noise_seed,
                )
                video_dir = class_dir / f"{subject_id}_v{vi:02d}"
                _write_frames(video_dir, frames)
                clips.append(
                    ClipDescriptor(
                        path=video_dir,
                        subject_id=subject_id,
                        label=ci,
                        frame_count=spec.frames,
                    )
                )
                log_rows.append(
                    {
                        "path": str(video_dir.relative_to(root)),
                        "class_name": taxonomy.name(ci),
                        "label": ci,
                        "subject_id": subject_id,
                        "video_id": f"v{vi:02d}",
                        "motion_angle": cp["angle"],
                        "osc_freq": cp["freq"],
                        "speed": cp["speed"],
                        "base_hue": sp["hue"],
                        "base_radius": sp["radius"],
                        "base_row": sp["base_row"],
                        "base_col": sp["base_col"],
                        "jitter_row": float(jitter[0]),
                        "jitter_col": float(jitter[1]),
                        "phase": phase,
                        "noise_seed": noise_seed,
                    }
                )

    with open(root / "gen_params.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(log_rows[0].keys()))
        writer.writeheader()
        writer.writerows(log_rows)
    return DatasetIndex(clips=clips, taxonomy=taxonomy, root=root)


def split_folds(index, k, seed):
    """Deal shuffled subjects round-robin into k folds (subject-grouped)."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    subjects = index.subjects()
    if len(subjects) < k:
        raise ValueError(
            f"need at least {k} distinct subjects for {k} folds, found {len(subjects)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    return FoldPlan(k=k, assignments={s: i % k for i, s in enumerate(order)})


def split_by_fold(index, plan, test_fold):
    """(train, test) indexes for one fold of the cross-validation."""
    if not 0 <= test_fold < plan.k:
        raise ValueError(f"fold {test_fold} out of range [0,{plan.k})")
    train, test = [], []
    for d in index.clips:
        fold = plan.assignments.get(d.subject_id)
        if fold is None:
            raise ValueError(f"subject {d.subject_id!r} missing from fold plan")
        (test if fold == test_fold else train).append(d)
    return index.with_clips(train), index.with_clips(test)


def label_subset(index, fraction, seed):
    """Per-class stratified subsample: round half up, at least 1 per class."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0,1], got {fraction}")
    if fraction == 1.0:
        return index.with_clips(index.clips)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    by_label = {}
    for d in index.clips:
        by_label.setdefault(d.label, []).append(d)
    keep = []
    for label in sorted(by_label):
        group = by_label[label]
        m = max(1, int(math.floor(len(group) * fraction + 0.5)))
        order = rng.permutation(len(group))[:m]
        keep.extend(group[i] for i in sorted(order))
    return index.with_clips(keep)
