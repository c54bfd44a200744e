"""Backbone taps, full model assembly, determinism, checkpoint round-trips."""

import numpy as np
import pytest

from roadseg import CheckpointError, ConfigError, DomainError, ShapeError, Tensor
from roadseg.checkpoint import load_arrays, load_model, save_arrays, save_model
from roadseg.model import (
    BackboneConfig,
    Model,
    ModelConfig,
    backbone_forward,
    backbone_parameters,
    count_parameters,
    init_backbone,
    model_parameters,
    toy_config,
)
from roadseg.pyramid import DenseCascadeConfig
from roadseg.reference import numeric_grad_at, rel_err


def tiny_config(**overrides) -> ModelConfig:
    """Smallest structurally complete config; cheap enough for finite differences."""
    defaults = dict(
        backbone=BackboneConfig(
            stem_channels=2, blocks=((1, 2, 2), (1, 2, 2), (1, 2, 2)),
        ),
        pyramid=DenseCascadeConfig(dilation_rates=(1, 2), growth_channels=2, projection_channels=2),
        se_reduction=2,
        decoder_channels=2,
        low_proj_channels=2,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


# -- backbone config ----------------------------------------------------------


def test_backbone_config_validates_taps_and_strides():
    with pytest.raises(ConfigError):
        BackboneConfig(blocks=((2, 32, 2),), low_tap_index=0, high_tap_index=0)
    with pytest.raises(ConfigError):
        BackboneConfig(low_tap_index=2, high_tap_index=1)
    with pytest.raises(ConfigError):
        BackboneConfig(blocks=((2, 32, 1), (2, 64, 2), (2, 128, 2)))  # low tap lands at stride 2
    with pytest.raises(ConfigError):
        BackboneConfig(blocks=())
    with pytest.raises(ConfigError):
        BackboneConfig(blocks=((0, 32, 2), (2, 64, 2), (2, 128, 2)))
    cfg = BackboneConfig()
    assert cfg.stride_after_block(0) == 4
    assert cfg.stride_after_block(2) == 16


def test_backbone_tap_shapes():
    cfg = toy_config().backbone
    weights = init_backbone(cfg, np.random.default_rng(80))
    x = Tensor(np.random.default_rng(81).normal(size=(2, 3, 64, 64)))
    low, high = backbone_forward(x, cfg, weights)
    assert low.shape == (2, 16, 16, 16)
    assert high.shape == (2, 64, 4, 4)


def test_backbone_rejects_indivisible_input():
    cfg = toy_config().backbone
    weights = init_backbone(cfg, np.random.default_rng(82))
    with pytest.raises(ShapeError):
        backbone_forward(Tensor.zeros((1, 3, 60, 64)), cfg, weights)
    with pytest.raises(ShapeError):
        backbone_forward(Tensor.zeros((1, 4, 64, 64)), cfg, weights)


def test_gradient_reaches_stem_from_high_tap():
    cfg = toy_config().backbone
    weights = init_backbone(cfg, np.random.default_rng(83))
    x = Tensor(np.random.default_rng(84).normal(size=(1, 3, 32, 32)))
    _, high = backbone_forward(x, cfg, weights, training=True)
    high.sum().backward()
    stem_w = weights.stem.conv.standard
    assert stem_w.grad is not None and np.abs(stem_w.grad).max() > 0


# -- full model ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["dense", "parallel"])
def test_model_output_shape_and_range(kind):
    model = Model.build(toy_config(kind), seed=5)
    for size in (64, 128):
        x = Tensor(np.random.default_rng(size).uniform(size=(1, 3, size, size)))
        out = model.forward(x)
        assert out.shape == (1, 1, size, size)
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)


def test_variant_parity_same_shapes():
    x = Tensor(np.random.default_rng(85).uniform(size=(2, 3, 64, 64)))
    dense = Model.build(toy_config("dense"), seed=1).forward(x)
    parallel = Model.build(toy_config("parallel"), seed=1).forward(x)
    assert dense.shape == parallel.shape == (2, 1, 64, 64)


def test_stage_name_prefixes_shape_errors():
    model = Model.build(toy_config(), seed=2)
    with pytest.raises(ShapeError) as exc:
        model.forward(Tensor.zeros((1, 3, 40, 64)))
    assert str(exc.value).startswith("backbone:")
    with pytest.raises(ShapeError) as exc:
        model.forward(Tensor.zeros((1, 4, 64, 64)))
    assert str(exc.value).startswith("backbone:")


def test_deterministic_build_and_forward():
    a = Model.build(toy_config(), seed=7)
    b = Model.build(toy_config(), seed=7)
    for (na, ta), (nb, tb) in zip(a.parameters(), b.parameters()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    x = Tensor(np.random.default_rng(86).uniform(size=(1, 3, 64, 64)))
    np.testing.assert_array_equal(a.forward(x).data, b.forward(x).data)

    c = Model.build(toy_config(), seed=8)
    assert not np.array_equal(a.weights.backbone.stem.conv.standard.data,
                              c.weights.backbone.stem.conv.standard.data)


def test_parameter_names_unique():
    model = Model.build(toy_config(), seed=3)
    names = [n for n, _ in model.parameters()] + [n for n, _ in model.buffers()]
    assert len(names) == len(set(names))
    assert any(n.startswith("backbone.stem") for n in names)
    assert any(n.startswith("pyramid.layer0") for n in names)
    assert any(n.startswith("se.") for n in names)
    assert "head.bias" in names


def test_count_parameters_hand_check():
    cfg = tiny_config()
    # stem 54+4; three separable units (18+4+4)x3; cascade 26+48+16;
    # low-proj 4+4; gates 8+8; decoder 72+4 and 36+4; head 2+1
    assert count_parameters(cfg) == 369


def test_count_parameters_monotone_in_growth():
    small = toy_config()
    grown = ModelConfig(
        backbone=small.backbone,
        pyramid=DenseCascadeConfig(dilation_rates=(3, 6, 12), growth_channels=16,
                                   projection_channels=32),
        se_reduction=2, decoder_channels=64,
    )
    assert count_parameters(grown) > count_parameters(small)


def test_end_to_end_gradient_spot_check():
    # sampled central differences across every stage of the pipeline
    model = Model.build(tiny_config(), seed=11)
    rng = np.random.default_rng(87)
    x = Tensor(rng.normal(size=(1, 3, 32, 32)), requires_grad=True)
    probe = Tensor(rng.normal(size=(1, 1, 32, 32)))

    def build():
        return (model.forward(x, training=True) * probe).sum()

    params = dict(model.parameters())
    picks = [
        ("x", x),
        ("backbone.stem.standard", params["backbone.stem.standard"]),
        ("backbone.block1.unit0.depthwise", params["backbone.block1.unit0.depthwise"]),
        ("pyramid.layer1.pointwise", params["pyramid.layer1.pointwise"]),
        ("pyramid.projection.standard", params["pyramid.projection.standard"]),
        ("se.reduce", params["se.reduce"]),
        ("decoder1.gamma", params["decoder1.gamma"]),
        ("head.standard", params["head.standard"]),
        ("head.bias", params["head.bias"]),
    ]
    for _, t in picks:
        t.zero_grad()
    build().backward()
    for name, t in picks:
        k = min(12, t.size)
        idx = rng.choice(t.size, size=k, replace=False)
        num = numeric_grad_at(lambda _: build().item(), t.data, idx)
        got = t.grad.reshape(-1)[idx]
        assert rel_err(got, num).max() < 1e-3, name


# -- checkpoints --------------------------------------------------------------


def test_array_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(88)
    entries = [
        ("a.weight", rng.normal(size=(3, 2, 3, 3))),
        ("a.running_mean", rng.normal(size=5).astype(np.float32)),
        ("b", np.float64(np.pi).reshape(1)),
    ]
    path = tmp_path / "w.ckpt"
    save_arrays(path, entries)
    back = load_arrays(path)
    assert set(back) == {"a.weight", "a.running_mean", "b"}
    for name, arr in entries:
        assert back[name].dtype == arr.dtype
        np.testing.assert_array_equal(back[name], arr)


def test_checkpoint_error_cases(tmp_path):
    good = tmp_path / "good.ckpt"
    save_arrays(good, [("w", np.zeros((2, 2)))])

    bad_magic = tmp_path / "bad.ckpt"
    bad_magic.write_bytes(b"NOPE" + good.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_arrays(bad_magic)

    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_arrays(truncated)

    import struct

    version = tmp_path / "ver.ckpt"
    raw = bytearray(good.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    version.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_arrays(version)

    trailing = tmp_path / "tail.ckpt"
    trailing.write_bytes(good.read_bytes() + b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        load_arrays(trailing)

    with pytest.raises(DomainError, match="duplicate"):
        save_arrays(tmp_path / "dup.ckpt", [("w", np.zeros(2)), ("w", np.ones(2))])
    with pytest.raises(DomainError, match="dtype"):
        save_arrays(tmp_path / "int.ckpt", [("w", np.zeros(2, dtype=np.int32))])


def test_model_checkpoint_roundtrip_forward_identical(tmp_path):
    x = Tensor(np.random.default_rng(89).uniform(size=(1, 3, 64, 64)))
    saved = Model.build(toy_config(), seed=21)
    # push the running stats away from their init so buffers matter
    saved.forward(x, training=True)
    reference = saved.forward(x).data

    path = tmp_path / "model.ckpt"
    save_model(path, saved)

    other = Model.build(toy_config(), seed=99)
    assert not np.array_equal(other.forward(x).data, reference)
    load_model(path, other)
    np.testing.assert_array_equal(other.forward(x).data, reference)


def test_model_checkpoint_name_mismatch(tmp_path):
    saved = Model.build(toy_config("dense"), seed=1)
    path = tmp_path / "model.ckpt"
    save_model(path, saved)
    other = Model.build(toy_config("parallel"), seed=1)
    with pytest.raises(CheckpointError):
        load_model(path, other)
