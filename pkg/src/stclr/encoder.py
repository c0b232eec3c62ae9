"""Factorized spatiotemporal residual encoder and its projection head.

Each residual unit splits a t x d x d convolution into a spatial (1,d,d)
convolution into N intermediate channels, batch norm + ReLU, then a
temporal (t,1,1) convolution. N is chosen per block so the factorized
parameter count never exceeds the unfactorized one. Two single-conv
variants (`full3d`, `mixed`) share the topology and stride schedule for
comparison runs.

Layer table convention: a kernel entry "C, [t, h, w]" means C kernels of
temporal x height x width extent [t, h, w]; output sizes are [C, T, H, W].
"""

import hashlib
import json
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import BuildError, ShapeError
from .nn import (
    BatchNorm3d,
    Conv3d,
    Dense,
    Module,
    Sequential,
    Tensor,
    adaptive_avg_pool3d,
    ops,
    relu,
)

VARIANTS = ("r2plus1d", "full3d", "mixed")


def intermediate_channels(m_in, m_out, t, d):
    """Largest N with N*(d*d*m_in) + m_out*(t*N) <= t*d*d*m_in*m_out, floor 1.

    Exact integer arithmetic; the floor division is the round-down in
    N = t*d^2*m_in*m_out / (d^2*m_in + t*m_out).
    """
    if min(m_in, m_out, t, d) < 1:
        raise ValueError("all arguments must be >= 1")
    return max(1, (t * d * d * m_in * m_out) // (d * d * m_in + t * m_out))


@dataclass(frozen=True)
class R2Plus1DBlockSpec:
    """One factorized unit: spatial conv into N channels, then temporal."""

    in_channels: int
    out_channels: int
    intermediate_channels: int
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    spatial_stride: int = 1
    temporal_stride: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.intermediate_channels) < 1:
            raise BuildError(f"channel counts must be >= 1 in {self}")
        if self.temporal_kernel % 2 == 0 or self.spatial_kernel % 2 == 0:
            raise BuildError(f"kernel extents must be odd in {self}")

    @property
    def spatial_padding(self):
        return (0, self.spatial_kernel // 2, self.spatial_kernel // 2)

    @property
    def temporal_padding(self):
        return (self.temporal_kernel // 2, 0, 0)

    def factorized_param_count(self, n=None):
        n = self.intermediate_channels if n is None else n
        d, t = self.spatial_kernel, self.temporal_kernel
        return n * self.in_channels * d * d + self.out_channels * n * t

    def full3d_param_count(self):
        d, t = self.spatial_kernel, self.temporal_kernel
        return self.out_channels * self.in_channels * t * d * d


@dataclass(frozen=True)
class ProjectionSpec:
    input_dim: int = 512
    hidden_dim: int = 512
    output_dim: int = 128

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise BuildError(f"projection dims must be >= 1: {self}")


@dataclass(frozen=True)
class EncoderSpec:
    """Declarative network description; the digest guards checkpoints."""

    preset: str = "paper"
    variant: str = "r2plus1d"
    input_shape: Tuple[int, int, int, int] = (3, 16, 224, 224)
    stem_width: int = 45
    channel_plan: Tuple[int, ...] = (64, 128, 256, 512)
    blocks_per_stage: Tuple[int, ...] = (2, 2, 2, 2)
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    stem_spatial_kernel: int = 7
    projection_hidden: int = 0  # 0 means "same as embedding_dim"
    projection_dim: int = 128

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise BuildError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.channel_plan) != len(self.blocks_per_stage) or not self.channel_plan:
            raise BuildError("channel_plan and blocks_per_stage must align and be non-empty")
        if min(self.channel_plan) < 1 or min(self.blocks_per_stage) < 1:
            raise BuildError("channel plan and block counts must be >= 1")
        if len(self.input_shape) != 4 or min(self.input_shape) < 1:
            raise BuildError(f"input shape must be (C,T,H,W) positive, got {self.input_shape}")
        if self.stem_width < 1:
            raise BuildError("stem width must be >= 1")
        for k in (self.temporal_kernel, self.spatial_kernel, self.stem_spatial_kernel):
            if k < 1 or k % 2 == 0:
                raise BuildError(f"kernel extents must be odd and >= 1, got {k}")

    @classmethod
    def paper(cls, variant="r2plus1d"):
        return cls(preset="paper", variant=variant)

    @classmethod
    def tiny(cls, variant="r2plus1d"):
        plan = (8, 16, 32, 64)
        return cls(
            preset="tiny",
            variant=variant,
            input_shape=(3, 8, 32, 32),
            stem_width=intermediate_channels(3, plan[0], 3, 7),
            channel_plan=plan,
        )

    @classmethod
    def preset_named(cls, name, variant="r2plus1d"):
        if name == "paper":
            return cls.paper(variant)
        if name == "tiny":
            return cls.tiny(variant)
        raise BuildError(f"unknown preset {name!r}; expected 'paper' or 'tiny'")

    @property
    def embedding_dim(self):
        return self.channel_plan[-1]

    @property
    def projection(self):
        hidden = self.projection_hidden or self.embedding_dim
        return ProjectionSpec(self.embedding_dim, hidden, self.projection_dim)

    def block_specs(self):
        """Every factorized unit in network order, shared-N per block."""
        units = []
        t, d = self.temporal_kernel, self.spatial_kernel
        prev = self.channel_plan[0]
        for stage, (out, blocks) in enumerate(
            zip(self.channel_plan, self.blocks_per_stage)
        ):
            for b in range(blocks):
                block_in = prev if b == 0 else out
                n = intermediate_channels(block_in, out, t, d)
                down = stage > 0 and b == 0
                units.append(
                    R2Plus1DBlockSpec(
                        block_in, out, n, t, d,
                        spatial_stride=2 if down else 1,
                        temporal_stride=2 if down else 1,
                    )
                )
                units.append(R2Plus1DBlockSpec(out, out, n, t, d))
            prev = out
        return units

    def to_dict(self):
        return {
            "preset": self.preset,
            "variant": self.variant,
            "input_shape": list(self.input_shape),
            "stem_width": self.stem_width,
            "channel_plan": list(self.channel_plan),
            "blocks_per_stage": list(self.blocks_per_stage),
            "temporal_kernel": self.temporal_kernel,
            "spatial_kernel": self.spatial_kernel,
            "stem_spatial_kernel": self.stem_spatial_kernel,
            "projection_hidden": self.projection_hidden,
            "projection_dim": self.projection_dim,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("input_shape", "channel_plan", "blocks_per_stage"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


class Conv2Plus1D(Module):
    """spatial (1,d,d) conv -> BN -> ReLU -> temporal (t,1,1) conv."""

    def __init__(self, unit, rng, dtype):
        super().__init__()
        self.conv_s = Conv3d(
            unit.in_channels,
            unit.intermediate_channels,
            (1, unit.spatial_kernel, unit.spatial_kernel),
            stride=(1, unit.spatial_stride, unit.spatial_stride),
            padding=unit.spatial_padding,
            rng=rng,
            dtype=dtype,
        )
        self.bn = BatchNorm3d(unit.intermediate_channels, dtype=dtype)
        self.conv_t = Conv3d(
            unit.intermediate_channels,
            unit.out_channels,
            (unit.temporal_kernel, 1, 1),
            stride=(unit.temporal_stride, 1, 1),
            padding=unit.temporal_padding,
            rng=rng,
            dtype=dtype,
        )

    def forward(self, x):
        return self.conv_t(relu(self.bn(self.conv_s(x))))


def _make_unit(spec, unit, stage, rng, dtype):
    t, d = unit.temporal_kernel, unit.spatial_kernel
    stride = (unit.temporal_stride, unit.spatial_stride, unit.spatial_stride)
    if spec.variant == "r2plus1d":
        return Conv2Plus1D(unit, rng, dtype)
    if spec.variant == "full3d" or (spec.variant == "mixed" and stage == 0):
        return Conv3d(
            unit.in_channels, unit.out_channels, (t, d, d),
            stride=stride, padding=(t // 2, d // 2, d // 2), rng=rng, dtype=dtype,
        )
    return Conv3d(
        unit.in_channels, unit.out_channels, (1, d, d),
        stride=stride, padding=(0, d // 2, d // 2), rng=rng, dtype=dtype,
    )


class ResidualBlock(Module):
    """Two units with BN; projection shortcut at channel/resolution changes."""

    def __init__(self, spec, unit1, unit2, stage, rng, dtype):
        super().__init__()
        self.unit1 = _make_unit(spec, unit1, stage, rng, dtype)
        self.bn1 = BatchNorm3d(unit1.out_channels, dtype=dtype)
        self.unit2 = _make_unit(spec, unit2, stage, rng, dtype)
        self.bn2 = BatchNorm3d(unit2.out_channels, dtype=dtype)
        downsample = unit1.spatial_stride != 1 or unit1.temporal_stride != 1
        if downsample or unit1.in_channels != unit1.out_channels:
            self.shortcut = Conv3d(
                unit1.in_channels, unit1.out_channels, (1, 1, 1),
                stride=(2, 2, 2) if downsample else (1, 1, 1),
                rng=rng, dtype=dtype,
            )
            self.shortcut_bn = BatchNorm3d(unit1.out_channels, dtype=dtype)
        else:
            self.shortcut = None
            self.shortcut_bn = None

    def forward(self, x):
        out = relu(self.bn1(self.unit1(x)))
        out = self.bn2(self.unit2(out))
        sidestep = x if self.shortcut is None else self.shortcut_bn(self.shortcut(x))
        return relu(ops.add(out, sidestep))


class Stem(Module):
    def __init__(self, spec, rng, dtype):
        super().__init__()
        k = spec.stem_spatial_kernel
        out = spec.channel_plan[0]
        if spec.variant == "r2plus1d":
            self.conv_s = Conv3d(
                spec.input_shape[0], spec.stem_width, (1, k, k),
                stride=(1, 2, 2), padding=(0, k // 2, k // 2), rng=rng, dtype=dtype,
            )
            self.bn_s = BatchNorm3d(spec.stem_width, dtype=dtype)
            t = spec.temporal_kernel
            self.conv_t = Conv3d(
                spec.stem_width, out, (t, 1, 1),
                padding=(t // 2, 0, 0), rng=rng, dtype=dtype,
            )
            self.bn_t = BatchNorm3d(out, dtype=dtype)
        else:
            t = spec.temporal_kernel
            self.conv = Conv3d(
                spec.input_shape[0], out, (t, k, k),
                stride=(1, 2, 2), padding=(t // 2, k // 2, k // 2),
                rng=rng, dtype=dtype,
            )
            self.bn = BatchNorm3d(out, dtype=dtype)

    def forward(self, x):
        if hasattr(self, "conv"):
            return relu(self.bn(self.conv(x)))
        h = relu(self.bn_s(self.conv_s(x)))
        return relu(self.bn_t(self.conv_t(h)))


class Encoder(Module):
    """Stem, four residual stages, global average pool to [B, embedding_dim]."""

    def __init__(self, spec, rng, dtype):
        super().__init__()
        self.spec = spec
        self.in_channels = spec.input_shape[0]
        self.embedding_dim = spec.embedding_dim
        self.stem = Stem(spec, rng, dtype)
        units = spec.block_specs()
        stages = []
        i = 0
        for stage, blocks in enumerate(spec.blocks_per_stage):
            group = []
            for _ in range(blocks):
                group.append(
                    ResidualBlock(spec, units[i], units[i + 1], stage, rng, dtype)
                )
                i += 2
            stages.append(Sequential(*group))
        self.stages = Sequential(*stages)

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 5:
            raise ShapeError(f"expected [B,C,T,H,W] input, got shape {x.data.shape}")
        if x.data.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} input channels, got {x.data.shape[1]}"
            )
        return adaptive_avg_pool3d(self.stages(self.stem(x)))


class ProjectionHead(Module):
    """Dense -> ReLU -> Dense; no normalization inside the head."""

    def __init__(self, proj, rng, dtype):
        super().__init__()
        self.input_dim = proj.input_dim
        self.output_dim = proj.output_dim
        self.dense1 = Dense(proj.input_dim, proj.hidden_dim, rng=rng, dtype=dtype)
        self.dense2 = Dense(proj.hidden_dim, proj.output_dim, rng=rng, dtype=dtype)

    def forward(self, h):
        if not isinstance(h, Tensor):
            h = Tensor(h)
        if h.data.ndim != 2 or h.data.shape[1] != self.input_dim:
            raise ShapeError(
                f"expected [B,{self.input_dim}] features, got shape {h.data.shape}"
            )
        return self.dense2(relu(self.dense1(h)))


def build_encoder(spec, rng=None, dtype=np.float32):
    rng = rng if rng is not None else np.random.default_rng(0)
    return Encoder(spec, rng, dtype)


def build_projection(spec, rng=None, dtype=np.float32):
    rng = rng if rng is not None else np.random.default_rng(0)
    proj = spec.projection if isinstance(spec, EncoderSpec) else spec
    return ProjectionHead(proj, rng, dtype)


def encode(network, batch):
    """h = network(batch); eval mode is deterministic and batch-independent."""
    return network(batch)


def project(head, h):
    """z = W2 relu(W1 h + b1) + b2."""
    return head(h)


def count_parameters(module):
    return int(sum(p.data.size for _, p in module.named_parameters()))


def _conv_out(length, kernel, stride, padding):
    return (length + 2 * padding - kernel) // stride + 1


def _kernel_str(count, dims):
    return f"{count}, [{dims[0]}, {dims[1]}, {dims[2]}]"


def architecture_rows(spec):
    """Symbolic layer table: dicts of layer, output_size, kernel, repeat.

    Grouped the way the compact table prints: the first stage's repeated
    unit carries a x(2*blocks) annotation; later stages list the
    downsampling block in full, one shortcut row, then the remaining
    identity blocks with a x(2*(blocks-1)) annotation.
    """
    rows = []
    c, t_len, h, w = spec.input_shape
    k = spec.stem_spatial_kernel
    tk, d = spec.temporal_kernel, spec.spatial_kernel
    h, w = _conv_out(h, k, 2, k // 2), _conv_out(w, k, 2, k // 2)
    c0 = spec.channel_plan[0]

    def add(layer, channels, shape, kernel, repeat=1):
        rows.append(
            {
                "layer": layer,
                "output_size": [channels, shape[0], shape[1], shape[2]],
                "kernel": kernel,
                "repeat": repeat,
            }
        )

    shape = (t_len, h, w)
    if spec.variant == "r2plus1d":
        add("Conv Block_1", spec.stem_width, shape, _kernel_str(spec.stem_width, (1, k, k)))
        add("Conv Block_1", c0, shape, _kernel_str(c0, (tk, 1, 1)))
    else:
        add("Conv Block_1", c0, shape, _kernel_str(c0, (tk, k, k)))

    units = spec.block_specs()
    i = 0

    def unit_rows(label, unit, shape, repeat=1):
        t_l, h_l, w_l = shape
        h_l = _conv_out(h_l, unit.spatial_kernel, unit.spatial_stride, unit.spatial_kernel // 2)
        w_l = _conv_out(w_l, unit.spatial_kernel, unit.spatial_stride, unit.spatial_kernel // 2)
        t_l = _conv_out(t_l, unit.temporal_kernel, unit.temporal_stride, unit.temporal_kernel // 2)
        out_shape = (t_l, h_l, w_l)
        if spec.variant == "r2plus1d":
            add(label, unit.intermediate_channels, (shape[0], h_l, w_l),
                _kernel_str(unit.intermediate_channels, (1, unit.spatial_kernel, unit.spatial_kernel)),
                repeat)
            add(label, unit.out_channels, out_shape,
                _kernel_str(unit.out_channels, (unit.temporal_kernel, 1, 1)), repeat)
        elif spec.variant == "full3d" or (spec.variant == "mixed" and label == "Conv Block_1"):
            add(label, unit.out_channels, out_shape,
                _kernel_str(unit.out_channels, (unit.temporal_kernel, unit.spatial_kernel, unit.spatial_kernel)),
                repeat)
        else:
            add(label, unit.out_channels, out_shape,
                _kernel_str(unit.out_channels, (1, unit.spatial_kernel, unit.spatial_kernel)),
                repeat)
        return out_shape

    for stage, (out, blocks) in enumerate(zip(spec.channel_plan, spec.blocks_per_stage)):
        if stage == 0:
            shape = unit_rows("Conv Block_1", units[i], shape, repeat=2 * blocks)
            i += 2 * blocks
        else:
            down_label = f"Conv Block_{2 * stage}"
            shape = unit_rows(down_label, units[i], shape)
            shape = unit_rows(down_label, units[i + 1], shape)
            i += 2
            add(f"Residual layer_{stage}", out, shape, _kernel_str(out, (1, 1, 1)))
            if blocks > 1:
                shape = unit_rows(
                    f"Conv Block_{2 * stage + 1}", units[i], shape,
                    repeat=2 * (blocks - 1),
                )
                i += 2 * (blocks - 1)
    add("Ada. Ave. Pool", spec.embedding_dim, (1, 1, 1), "")
    return rows


def format_architecture(rows):
    """Fixed-width text rendering of architecture_rows output."""
    lines = []
    header = f"{'Layer Name':<18} {'Output size':<22} {'Kernel size':<18} Repeat"
    lines.append(header)
    lines.append("-" * len(header))
    for row in rows:
        size = "[" + ", ".join(str(v) for v in row["output_size"]) + "]"
        repeat = f"x{row['repeat']}" if row["repeat"] > 1 else ""
        lines.append(f"{row['layer']:<18} {size:<22} {row['kernel']:<18} {repeat}")
    return "\n".join(lines)
