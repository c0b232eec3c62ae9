"""Run configuration: nested dataclasses with strict JSON round-tripping.

Precedence is command-line flag > config-file key > built-in default; the
CLI resolves flags into the loaded dict before construction here. Unknown
keys fail loudly so typos cannot silently fall back to defaults. Every run
writes its fully-resolved config beside its outputs.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError


def _build(cls, data, where):
    """Construct dataclass `cls` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        nested = _NESTED.get((cls, name))
        if nested is not None and value is not None:
            value = _build(nested, value, f"{where}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class SyntheticDataConfig:
    classes: int = 4
    subjects: int = 8
    videos_per_subject_per_class: int = 2
    frames: int = 24
    height: int = 32
    width: int = 32
    noise_sigma: float = 0.05


@dataclass
class DataConfig:
    root: Optional[str] = None  # None -> generate synthetic under out_dir
    synthetic: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)


@dataclass
class SamplerConfig:
    n: Optional[int] = None  # None -> encoder preset's temporal extent
    strategy: str = "random_choice"


@dataclass
class SpatialConfig:
    crop_area: List[float] = field(default_factory=lambda: [0.6, 1.0])
    crop_aspect: List[float] = field(default_factory=lambda: [3 / 4, 4 / 3])
    flip_probability: float = 0.5
    brightness: float = 0.8
    contrast: float = 0.8
    saturation: float = 0.8
    hue: float = 0.2


@dataclass
class PretrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 1000
    batch_size: int = 16
    checkpoint_interval: int = 0  # epochs between snapshots; 0 = final only


@dataclass
class FinetuneConfig:
    linear_epochs: int = 30
    full_epochs: int = 70
    lr: float = 1e-4
    plateau_patience: int = 3
    batch_size: int = 8
    val_fraction: float = 0.25


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    preset: str = "tiny"
    variant: str = "r2plus1d"
    tau: float = 0.5
    deterministic: bool = False
    num_workers: int = 1
    shared_pretrain: bool = True
    folds: int = 4
    label_fraction: float = 1.0
    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    spatial: SpatialConfig = field(default_factory=SpatialConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.pretrain.epochs < 1 or self.finetune.linear_epochs < 0 \
                or self.finetune.full_epochs < 0:
            raise ConfigError("epoch counts must be >= 1 (>= 0 for finetune phases)")
        if self.pretrain.batch_size < 2:
            raise ConfigError(
                "pretrain batch_size must be >= 2 clips; a single-clip batch has "
                "no negatives and the contrastive loss degenerates to zero"
            )
        if not 0 < self.finetune.val_fraction < 1:
            raise ConfigError("finetune val_fraction must be in (0,1)")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError("label_fraction must be in (0,1]")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.num_workers < 1:
            raise ConfigError("num_workers must be >= 1")
        if self.deterministic:
            self.num_workers = 1

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "config")

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_file(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")

    def encoder_spec(self):
        from .encoder import EncoderSpec

        return EncoderSpec.preset_named(self.preset, self.variant)

    def sampler_spec(self):
        from .augment import SamplerSpec

        n = self.sampler.n or self.encoder_spec().input_shape[1]
        return SamplerSpec(n=n, strategy=self.sampler.strategy)

    def spatial_spec(self):
        from .augment import SpatialAugSpec

        shape = self.encoder_spec().input_shape
        s = self.spatial
        return SpatialAugSpec(
            crop_area_range=tuple(s.crop_area),
            crop_aspect_range=tuple(s.crop_aspect),
            flip_probability=s.flip_probability,
            brightness=s.brightness,
            contrast=s.contrast,
            saturation=s.saturation,
            hue=s.hue,
            output_size=(shape[2], shape[3]),
        )


_NESTED = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "sampler"): SamplerConfig,
    (RunConfig, "spatial"): SpatialConfig,
    (RunConfig, "pretrain"): PretrainConfig,
    (RunConfig, "finetune"): FinetuneConfig,
    (DataConfig, "synthetic"): SyntheticDataConfig,
}
