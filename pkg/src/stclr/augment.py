"""Temporal sampling and frame-consistent spatial augmentation.

A training view is built in two stages: pick n frame indices from the clip
(one of three interchangeable strategies, or a uniform random choice among
them per call), then apply one spatial transform, drawn once, to every
selected frame. Per-frame parameter draws would let the network match views
on augmentation artifacts instead of content, so a single draw is shared
across the sub-video.

All image math is float32 in [0,1], frames shaped [H, W, 3].
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

STRATEGIES = ("pure_random", "uniform", "sequential", "random_choice")
# Strategies eligible for the per-call random choice (excludes the chooser).
_CONCRETE = ("pure_random", "uniform", "sequential")

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def normalize_strategy(name):
    key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
    aliases = {"purerandom": "pure_random", "randomchoice": "random_choice"}
    key = aliases.get(key, key)
    if key not in STRATEGIES:
        raise ValueError(
            f"unknown sampling strategy {name!r}; expected one of {STRATEGIES}"
        )
    return key


@dataclass
class SamplerSpec:
    """How to pick the n frame indices of a sub-video."""

    n: int = 16
    strategy: str = "random_choice"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"frames per sub-video must be >= 1, got {self.n}")
        self.strategy = normalize_strategy(self.strategy)


@dataclass
class SpatialAugSpec:
    """One crop/flip/color draw shared by all frames of a sub-video."""

    crop_area_range: Tuple[float, float] = (0.6, 1.0)
    crop_aspect_range: Tuple[float, float] = (3 / 4, 4 / 3)
    flip_probability: float = 0.5
    brightness: float = 0.8
    contrast: float = 0.8
    saturation: float = 0.8
    hue: float = 0.2
    output_size: Tuple[int, int] = (224, 224)
    seed: Optional[int] = None

    def __post_init__(self):
        a_min, a_max = self.crop_area_range
        if not (0 < a_min <= a_max <= 1):
            raise ValueError(
                f"crop area range must satisfy 0 < min <= max <= 1, got {self.crop_area_range}"
            )
        r_min, r_max = self.crop_aspect_range
        if not (0 < r_min <= r_max):
            raise ValueError(f"bad crop aspect range {self.crop_aspect_range}")
        if not (0 <= self.flip_probability <= 1):
            raise ValueError(f"flip probability must be in [0,1], got {self.flip_probability}")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} strength must be >= 0")
        if not (0 <= self.hue <= 0.5):
            raise ValueError(f"hue strength must be in [0, 0.5], got {self.hue}")
        h, w = self.output_size
        if h < 1 or w < 1:
            raise ValueError(f"output size must be positive, got {self.output_size}")


@dataclass
class SubVideo:
    """n augmented frames plus the record of how they were produced."""

    frames: np.ndarray  # [n, H_out, W_out, 3] float32
    source_indices: np.ndarray  # [n] int64, non-decreasing
    applied_params: dict = field(default_factory=dict)

    @property
    def frame_count(self):
        return int(self.frames.shape[0])


def sample_pure_random(frame_count, n, rng):
    """Uniform draw of n indices, sorted; replacement only when L < n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    if frame_count >= n:
        idx = rng.choice(frame_count, size=n, replace=False)
    else:
        idx = rng.integers(0, frame_count, size=n)
    idx.sort()
    return idx.astype(np.int64)


def sample_uniform(frame_count, n):
    """Evenly spaced indices including both endpoints.

    index_i = round-half-up(i*(L-1)/(n-1)), in exact integer arithmetic so
    every platform rounds ties identically.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if frame_count == 1:
        return np.zeros(n, dtype=np.int64)
    b = n - 1
    return np.array(
        [(2 * i * (frame_count - 1) + b) // (2 * b) for i in range(n)],
        dtype=np.int64,
    )


def sample_sequential(frame_count, n, rng):
    """A contiguous run of n frames; cyclic continuation when L < n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    if frame_count >= n:
        start = int(rng.integers(0, frame_count - n + 1))
        return np.arange(start, start + n, dtype=np.int64)
    idx = np.arange(n, dtype=np.int64) % frame_count
    idx.sort()
    return idx


def sample_temporal(clip, spec, rng):
    """Apply the spec's strategy; random_choice picks one uniformly per call."""
    frame_count = clip if isinstance(clip, (int, np.integer)) else clip.frame_count
    strategy = spec.strategy
    if strategy == "random_choice":
        strategy = _CONCRETE[int(rng.integers(0, len(_CONCRETE)))]
    if strategy == "pure_random":
        return sample_pure_random(frame_count, spec.n, rng)
    if strategy == "uniform":
        return sample_uniform(frame_count, spec.n)
    return sample_sequential(frame_count, spec.n, rng)


def resize_bilinear(frames, out_h, out_w):
    """Separable bilinear resize with half-pixel centers.

    At scale 1 the source coordinate of pixel i is exactly i, so the resize
    is an exact identity; tests rely on that.
    """
    frames = np.asarray(frames, dtype=np.float32)
    squeeze = frames.ndim == 3
    if squeeze:
        frames = frames[None]
    n, in_h, in_w, c = frames.shape

    def _axis(values, in_len, out_len, axis):
        if in_len == out_len:
            return values
        src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
        src = np.clip(src, 0.0, in_len - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, in_len - 1)
        frac = (src - lo).astype(np.float32)
        shape = [1, 1, 1, 1]
        shape[axis] = out_len
        frac = frac.reshape(shape)
        return np.take(values, lo, axis=axis) * (1 - frac) + np.take(
            values, hi, axis=axis
        ) * frac

    out = _axis(frames, in_h, out_h, axis=1)
    out = _axis(out, in_w, out_w, axis=2)
    return out[0] if squeeze else out


def _rgb_to_hsv(x):
    maxc = x.max(axis=-1)
    minc = x.min(axis=-1)
    v = maxc
    delta = maxc - minc
    safe = np.where(delta == 0, 1.0, delta).astype(np.float32)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    h = np.where(
        maxc == r,
        (g - b) / safe,
        np.where(maxc == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe),
    )
    h = np.where(delta == 0, 0.0, h / 6.0 % 1.0).astype(np.float32)
    s = np.where(maxc == 0, 0.0, delta / np.where(maxc == 0, 1.0, maxc)).astype(
        np.float32
    )
    return h, s, v


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = (h * 6.0 - i).astype(np.float32)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.select([i == k for k in range(6)], choices_r)
    g = np.select([i == k for k in range(6)], choices_g)
    b = np.select([i == k for k in range(6)], choices_b)
    return np.stack([r, g, b], axis=-1).astype(np.float32)


def _adjust(frames, op, factor):
    if op == "brightness":
        return frames * factor
    if op == "contrast":
        # Per-frame gray mean keeps the transform frame-local, so swapping
        # two input frames swaps the two outputs exactly.
        mean = (frames @ _LUMA).mean(axis=(1, 2), keepdims=True)[..., None]
        return (frames - mean) * factor + mean
    if op == "saturation":
        gray = (frames @ _LUMA)[..., None]
        return gray + (frames - gray) * factor
    if op == "hue":
        h, s, v = _rgb_to_hsv(np.clip(frames, 0.0, 1.0))
        h = (h + np.float32(factor)) % 1.0
        return _hsv_to_rgb(h, s, v)
    raise ValueError(f"unknown color op {op!r}")


def _draw_crop(in_h, in_w, spec, rng):
    """Sample a crop rectangle; fall back to a centered max-area crop."""
    a_min, a_max = spec.crop_area_range
    if a_min == 1.0 and a_max == 1.0:
        # Cropping disabled: take the full frame, no draws consumed.
        return 0, 0, in_h, in_w, False
    log_r = np.log(spec.crop_aspect_range)
    area = in_h * in_w
    for _ in range(10):
        target = area * rng.uniform(a_min, a_max)
        aspect = float(np.exp(rng.uniform(log_r[0], log_r[1])))
        w = int(round(np.sqrt(target * aspect)))
        h = int(round(np.sqrt(target / aspect)))
        if 1 <= w <= in_w and 1 <= h <= in_h:
            top = int(rng.integers(0, in_h - h + 1))
            left = int(rng.integers(0, in_w - w + 1))
            return top, left, h, w, False
    # Centered crop of a_max area at the frame's own aspect always fits.
    scale = np.sqrt(a_max)
    h = max(1, int(round(in_h * scale)))
    w = max(1, int(round(in_w * scale)))
    return (in_h - h) // 2, (in_w - w) // 2, h, w, True


def spatial_augment(frames, spec, rng):
    """One crop/flip/color draw applied identically to every frame.

    Returns (frames [n, H_out, W_out, 3] float32 in [0,1], applied_params).
    Color ops run in a randomized order; an op whose strength is zero is
    skipped entirely so zero-strength specs are exact identities.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim == 3:
        frames = frames[None]
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"expected frames shaped [n,H,W,3], got {frames.shape}")
    if frames.shape[0] == 0:
        raise ValueError("cannot augment an empty frame sequence")
    in_h, in_w = frames.shape[1], frames.shape[2]

    top, left, h, w, fallback = _draw_crop(in_h, in_w, spec, rng)
    out = frames[:, top : top + h, left : left + w, :]
    out = resize_bilinear(out, *spec.output_size)

    flip = bool(rng.random() < spec.flip_probability)
    if flip:
        out = out[:, :, ::-1, :]

    strengths = {
        "brightness": spec.brightness,
        "contrast": spec.contrast,
        "saturation": spec.saturation,
        "hue": spec.hue,
    }
    order = [str(op) for op in rng.permutation(sorted(strengths)) if strengths[op] > 0]
    factors = {}
    for op in order:
        s = strengths[op]
        if op == "hue":
            factors[op] = float(rng.uniform(-s, s))
        else:
            factors[op] = float(rng.uniform(max(0.0, 1 - s), 1 + s))
        out = _adjust(out, op, factors[op])

    out = np.ascontiguousarray(np.clip(out, 0.0, 1.0), dtype=np.float32)
    params = {
        "crop": {"top": top, "left": left, "height": h, "width": w},
        "crop_fallback": fallback,
        "flip": flip,
        "color_order": list(order),
        "color_factors": factors,
        "output_size": list(spec.output_size),
    }
    return out, params


def make_views(clip, sampler, spatial, rng=None):
    """Two independently augmented sub-videos of one clip (a positive pair)."""
    if rng is None:
        entropy = [s for s in (sampler.seed, spatial.seed) if s is not None]
        rng = np.random.default_rng(np.random.SeedSequence(entropy or None))
    frames = clip.frames if hasattr(clip, "frames") else np.asarray(clip)
    views = []
    for _ in range(2):
        indices = sample_temporal(clip if hasattr(clip, "frame_count") else len(frames),
                                  sampler, rng)
        out, params = spatial_augment(frames[indices], spatial, rng)
        params["source_indices"] = [int(i) for i in indices]
        views.append(SubVideo(frames=out, source_indices=indices, applied_params=params))
    return views[0], views[1]


def eval_view(frames, n, output_size):
    """Deterministic view: uniform temporal sampling, full frame, resized."""
    frames = np.asarray(frames, dtype=np.float32)
    indices = sample_uniform(frames.shape[0], n)
    out = resize_bilinear(frames[indices], *output_size)
    return np.clip(out, 0.0, 1.0), indices
