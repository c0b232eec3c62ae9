"""Architecture construction: widths, layer table, parameter counts, shapes."""

import numpy as np
import pytest

from stclr.encoder import (
    EncoderSpec,
    ProjectionHead,
    architecture_rows,
    build_encoder,
    build_projection,
    count_parameters,
    format_architecture,
    intermediate_channels,
)
from stclr.errors import BuildError, ShapeError
from stclr.nn import Tensor, no_grad

# The factorized preset resolves to exactly this compressed table: one row
# per printed line, output sizes as [C, T, H, W] for a 16x224x224 input.
EXPECTED_PAPER_ROWS = [
    ("Conv Block_1", [45, 16, 112, 112], "45, [1, 7, 7]", 1),
    ("Conv Block_1", [64, 16, 112, 112], "64, [3, 1, 1]", 1),
    ("Conv Block_1", [144, 16, 112, 112], "144, [1, 3, 3]", 4),
    ("Conv Block_1", [64, 16, 112, 112], "64, [3, 1, 1]", 4),
    ("Conv Block_2", [230, 16, 56, 56], "230, [1, 3, 3]", 1),
    ("Conv Block_2", [128, 8, 56, 56], "128, [3, 1, 1]", 1),
    ("Conv Block_2", [230, 8, 56, 56], "230, [1, 3, 3]", 1),
    ("Conv Block_2", [128, 8, 56, 56], "128, [3, 1, 1]", 1),
    ("Residual layer_1", [128, 8, 56, 56], "128, [1, 1, 1]", 1),
    ("Conv Block_3", [288, 8, 56, 56], "288, [1, 3, 3]", 2),
    ("Conv Block_3", [128, 8, 56, 56], "128, [3, 1, 1]", 2),
    ("Conv Block_4", [460, 8, 28, 28], "460, [1, 3, 3]", 1),
    ("Conv Block_4", [256, 4, 28, 28], "256, [3, 1, 1]", 1),
    ("Conv Block_4", [460, 4, 28, 28], "460, [1, 3, 3]", 1),
    ("Conv Block_4", [256, 4, 28, 28], "256, [3, 1, 1]", 1),
    ("Residual layer_2", [256, 4, 28, 28], "256, [1, 1, 1]", 1),
    ("Conv Block_5", [576, 4, 28, 28], "576, [1, 3, 3]", 2),
    ("Conv Block_5", [256, 4, 28, 28], "256, [3, 1, 1]", 2),
    ("Conv Block_6", [921, 4, 14, 14], "921, [1, 3, 3]", 1),
    ("Conv Block_6", [512, 2, 14, 14], "512, [3, 1, 1]", 1),
    ("Conv Block_6", [921, 2, 14, 14], "921, [1, 3, 3]", 1),
    ("Conv Block_6", [512, 2, 14, 14], "512, [3, 1, 1]", 1),
    ("Residual layer_3", [512, 2, 14, 14], "512, [1, 1, 1]", 1),
    ("Conv Block_7", [1152, 2, 14, 14], "1152, [1, 3, 3]", 2),
    ("Conv Block_7", [512, 2, 14, 14], "512, [3, 1, 1]", 2),
    ("Ada. Ave. Pool", [512, 1, 1, 1], "", 1),
]

PAPER_PARAM_COUNT = 31_300_125


def test_intermediate_channel_widths():
    # The seven distinct widths used by the factorized preset.
    assert intermediate_channels(64, 64, 3, 3) == 144
    assert intermediate_channels(64, 128, 3, 3) == 230
    assert intermediate_channels(128, 128, 3, 3) == 288
    assert intermediate_channels(128, 256, 3, 3) == 460
    assert intermediate_channels(256, 256, 3, 3) == 576
    assert intermediate_channels(256, 512, 3, 3) == 921
    assert intermediate_channels(512, 512, 3, 3) == 1152
    widths = {u.intermediate_channels for u in EncoderSpec.paper().block_specs()}
    assert widths == {144, 230, 288, 460, 576, 921, 1152}


def test_parameter_budget_property():
    # N keeps the factorized pair within the full 3D kernel budget; N+1
    # would exceed it. Degenerate 1-channel/1-tap draws are excluded since
    # the floor of 1 intermediate channel can exceed a trivial budget.
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m_in = int(rng.integers(2, 513))
        m_out = int(rng.integers(2, 513))
        t = int(rng.integers(2, 6))
        d = int(rng.integers(2, 8))
        n = intermediate_channels(m_in, m_out, t, d)
        full = t * d * d * m_in * m_out
        cost = d * d * m_in * n + t * n * m_out
        cost_next = d * d * m_in * (n + 1) + t * (n + 1) * m_out
        assert cost <= full
        assert cost_next > full


def test_paper_architecture_rows_frozen():
    rows = architecture_rows(EncoderSpec.paper())
    got = [(r["layer"], r["output_size"], r["kernel"], r["repeat"]) for r in rows]
    assert got == EXPECTED_PAPER_ROWS


def test_format_architecture_lists_every_row():
    text = format_architecture(architecture_rows(EncoderSpec.paper()))
    assert "[512, 1, 1, 1]" in text
    assert "1152, [1, 3, 3]" in text
    assert len(text.strip().splitlines()) == len(EXPECTED_PAPER_ROWS) + 2


def test_paper_parameter_count_pinned():
    encoder = build_encoder(EncoderSpec.paper())
    assert count_parameters(encoder) == PAPER_PARAM_COUNT


def test_spec_digest_stable_and_distinct():
    a = EncoderSpec.paper()
    b = EncoderSpec.paper()
    assert a.digest() == b.digest()
    assert a.digest() != EncoderSpec.tiny().digest()
    assert EncoderSpec.from_dict(a.to_dict()).digest() == a.digest()


def test_preset_lookup():
    assert EncoderSpec.preset_named("tiny").preset == "tiny"
    assert EncoderSpec.preset_named("paper", "mixed").variant == "mixed"
    with pytest.raises(BuildError):
        EncoderSpec.preset_named("huge")


@pytest.mark.parametrize("variant", ["r2plus1d", "full3d", "mixed"])
def test_tiny_forward_shapes(variant):
    spec = EncoderSpec.tiny(variant=variant)
    encoder = build_encoder(spec, rng=np.random.default_rng(0))
    head = build_projection(spec, rng=np.random.default_rng(1))
    x = np.random.default_rng(2).random((2, 3, 8, 32, 32), dtype=np.float32)
    with no_grad():
        h = encoder(Tensor(x))
        z = head(h)
    assert h.shape == (2, spec.embedding_dim)
    assert z.shape == (2, spec.projection_dim)


def test_full3d_has_at_least_factorized_params():
    tiny_f = count_parameters(build_encoder(EncoderSpec.tiny()))
    tiny_3d = count_parameters(build_encoder(EncoderSpec.tiny(variant="full3d")))
    assert tiny_3d >= tiny_f


def test_variants_share_stage_output_shapes():
    x = np.random.default_rng(3).random((1, 3, 8, 32, 32), dtype=np.float32)
    outs = {}
    for variant in ("r2plus1d", "full3d", "mixed"):
        encoder = build_encoder(EncoderSpec.tiny(variant=variant),
                                rng=np.random.default_rng(0))
        with no_grad():
            outs[variant] = encoder(Tensor(x)).shape
    assert len(set(outs.values())) == 1


def test_eval_forward_deterministic():
    spec = EncoderSpec.tiny()
    encoder = build_encoder(spec, rng=np.random.default_rng(4))
    encoder.eval()
    x = np.random.default_rng(5).random((2, 3, 8, 32, 32), dtype=np.float32)
    with no_grad():
        a = encoder(Tensor(x)).data.copy()
        b = encoder(Tensor(x)).data.copy()
    np.testing.assert_array_equal(a, b)


def test_eval_batch_independence():
    spec = EncoderSpec.tiny()
    encoder = build_encoder(spec, rng=np.random.default_rng(6))
    encoder.eval()
    x = np.random.default_rng(7).random((3, 3, 8, 32, 32), dtype=np.float32)
    with no_grad():
        batched = encoder(Tensor(x)).data
        singles = np.concatenate(
            [encoder(Tensor(x[i:i + 1])).data for i in range(3)]
        )
    np.testing.assert_allclose(batched, singles, rtol=1e-4, atol=1e-5)


def test_encoder_rejects_bad_input():
    encoder = build_encoder(EncoderSpec.tiny())
    with pytest.raises(ShapeError):
        encoder(Tensor(np.zeros((2, 3, 8, 32), dtype=np.float32)))
    with pytest.raises(ShapeError):
        encoder(Tensor(np.zeros((2, 4, 8, 32, 32), dtype=np.float32)))


def test_projection_head_shapes():
    from stclr.encoder import ProjectionSpec

    head = ProjectionHead(ProjectionSpec(64, 64, 32),
                          rng=np.random.default_rng(8), dtype=np.float32)
    z = head(Tensor(np.zeros((5, 64), dtype=np.float32)))
    assert z.shape == (5, 32)
    with pytest.raises(ShapeError):
        head(Tensor(np.zeros((5, 63), dtype=np.float32)))


def test_spec_validation():
    with pytest.raises(BuildError):
        EncoderSpec.tiny(variant="bogus")
    with pytest.raises(BuildError):
        EncoderSpec(preset="x", variant="r2plus1d", input_shape=(3, 8, 32),
                    stem_width=8, channel_plan=(8, 16, 32, 64),
                    blocks_per_stage=(2, 2, 2, 2))


def test_block_specs_strides_and_shared_widths():
    units = EncoderSpec.paper().block_specs()
    assert len(units) == 16  # 4 stages x 2 residual blocks x 2 units
    # Only the first unit of each later stage downsamples.
    for i, u in enumerate(units):
        expect_stride = 2 if i in (4, 8, 12) else 1
        assert u.spatial_stride == expect_stride
        assert u.temporal_stride == expect_stride
    # Both units of a transition block share one width from (in, out).
    assert units[4].intermediate_channels == units[5].intermediate_channels == 230
    assert units[6].intermediate_channels == 288
