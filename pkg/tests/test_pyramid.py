"""Dense cascade vs parallel pyramid: channel laws, unrolling, receptive fields."""

import numpy as np
import pytest

from roadseg import ConfigError, ShapeError, Tensor
from roadseg.blocks import ConvBnUnit, run_unit
from roadseg.conv import ConvSpec, ConvWeights, conv2d
from roadseg.pyramid import (
    DenseCascadeConfig,
    ParallelPyramidConfig,
    ParallelPyramidWeights,
    cascade_receptive_field,
    dense_cascade,
    dense_cascade_concat,
    dense_cascade_parameters,
    init_dense_cascade,
    init_parallel_pyramid,
    parallel_pyramid,
    parallel_pyramid_parameters,
    parallel_receptive_field,
)
from roadseg.reference import max_rel_err, numeric_grad
from roadseg.tensor import concat_channels


def make_cascade(rates, g, proj, cin, seed=40):
    cfg = DenseCascadeConfig(dilation_rates=rates, growth_channels=g, projection_channels=proj)
    return cfg, init_dense_cascade(cfg, cin, np.random.default_rng(seed))


# -- config validation --------------------------------------------------------


def test_rate_list_validation():
    with pytest.raises(ConfigError):
        DenseCascadeConfig(dilation_rates=())
    with pytest.raises(ConfigError):
        DenseCascadeConfig(dilation_rates=(3, 3, 6))
    with pytest.raises(ConfigError):
        DenseCascadeConfig(dilation_rates=(6, 3))
    with pytest.raises(ConfigError):
        ParallelPyramidConfig(dilation_rates=(0, 2))
    with pytest.raises(ConfigError):
        DenseCascadeConfig(growth_channels=0)
    with pytest.raises(ConfigError):
        ParallelPyramidConfig(branch_channels=0)


def test_default_rates():
    assert ParallelPyramidConfig().dilation_rates == (6, 12, 18, 24)
    assert DenseCascadeConfig().dilation_rates == (3, 6, 12, 18)


def test_channel_bookkeeping():
    cfg = DenseCascadeConfig(dilation_rates=(3, 6, 12), growth_channels=8, projection_channels=32)
    assert cfg.concat_channels(16) == 40  # 16 + 3*8
    assert [cfg.layer_in_channels(l, 16) for l in range(3)] == [16, 24, 32]
    p = ParallelPyramidConfig(dilation_rates=(6, 12, 18, 24), branch_channels=7)
    assert p.concat_channels() == 28
    p2 = ParallelPyramidConfig(dilation_rates=(6, 12), branch_channels=7, include_image_pooling=True)
    assert p2.concat_channels() == 21


def test_channel_law_random_configs():
    rng = np.random.default_rng(41)
    for _ in range(20):
        L = int(rng.integers(1, 5))
        rates = tuple(sorted(rng.choice(np.arange(1, 30), size=L, replace=False).tolist()))
        g = int(rng.integers(1, 9))
        cin = int(rng.integers(1, 9))
        cfg, w = make_cascade(rates, g, 4, cin, seed=int(rng.integers(1 << 30)))
        x = Tensor(rng.normal(size=(1, cin, 8, 8)))
        pre = dense_cascade_concat(x, cfg, w)
        assert pre.shape[1] == cin + L * g
        assert w.layers[-1].conv.spec.in_channels == cin + (L - 1) * g


# -- dense cascade forward ----------------------------------------------------


def test_cascade_preserves_spatial_dims():
    cfg, w = make_cascade((3, 6, 12), 8, 32, 16)
    x = Tensor(np.random.default_rng(42).normal(size=(2, 16, 9, 11)))
    out = dense_cascade(x, cfg, w)
    assert out.shape == (2, 32, 9, 11)


def test_cascade_equals_hand_unrolled_composition():
    cfg, w = make_cascade((2, 5), 3, 6, 4)
    x = Tensor(np.random.default_rng(43).normal(size=(1, 4, 8, 8)))

    y1 = run_unit(x, w.layers[0], False)
    y2 = run_unit(concat_channels([y1, x]), w.layers[1], False)
    by_hand = run_unit(concat_channels([y2, y1, x]), w.projection, False)

    np.testing.assert_array_equal(dense_cascade(x, cfg, w).data, by_hand.data)


def test_zeroed_cascade_passes_input_slab_through():
    cfg, w = make_cascade((1, 2), 3, 5, 4)
    for unit in w.layers:
        unit.conv.depthwise.data[:] = 0.0
        unit.conv.pointwise.data[:] = 0.0
    x = Tensor(np.random.default_rng(44).normal(size=(2, 4, 6, 6)))
    pre = dense_cascade_concat(x, cfg, w, training=False)
    assert pre.shape[1] == 10
    np.testing.assert_array_equal(pre.data[:, :6], 0.0)  # two zero slabs of g=3
    np.testing.assert_array_equal(pre.data[:, 6:], x.data)  # input slab untouched, last


def test_input_slab_masking_changes_gradient():
    cfg, w = make_cascade((1, 2), 3, 5, 4)
    rng = np.random.default_rng(45)
    x = Tensor(rng.normal(size=(1, 4, 7, 7)), requires_grad=True)
    probe = Tensor(rng.normal(size=(1, 5, 7, 7)))

    (dense_cascade(x, cfg, w) * probe).sum().backward()
    direct_and_cascaded = x.grad.copy()

    x.zero_grad()
    w.projection.conv.standard.data[:, -4:] = 0.0  # cut the direct path: x sits in the last slab
    (dense_cascade(x, cfg, w) * probe).sum().backward()
    cascaded_only = x.grad.copy()

    assert not np.allclose(direct_and_cascaded, cascaded_only)
    assert np.abs(cascaded_only).max() > 0  # layers still feed gradient back


def test_cascade_gradient_matches_finite_differences():
    cfg, w = make_cascade((1, 2), 3, 4, 4)
    rng = np.random.default_rng(46)
    x = Tensor(rng.normal(size=(1, 4, 9, 9)), requires_grad=True)
    probe = Tensor(rng.normal(size=(1, 4, 9, 9)))
    leaves = [("x", x)] + dense_cascade_parameters(w, "cascade")

    def build():
        return (dense_cascade(x, cfg, w, training=True) * probe).sum()

    for _, t in leaves:
        t.zero_grad()
    build().backward()
    for name, t in leaves:
        num = numeric_grad(lambda _: build().item(), t.data)
        assert max_rel_err(t.grad, num) < 1e-4, name


def test_cascade_shape_errors():
    cfg, w = make_cascade((1, 2), 3, 4, 4)
    with pytest.raises(ShapeError):
        dense_cascade(Tensor.zeros((1, 5, 8, 8)), cfg, w)
    bigger = DenseCascadeConfig(dilation_rates=(1, 2, 4), growth_channels=3, projection_channels=4)
    with pytest.raises(ShapeError):
        dense_cascade(Tensor.zeros((1, 4, 8, 8)), bigger, w)


# -- receptive fields ---------------------------------------------------------


def test_receptive_field_formulas():
    assert cascade_receptive_field(DenseCascadeConfig(dilation_rates=(1,), growth_channels=1, projection_channels=1)) == 3
    cfg = DenseCascadeConfig(dilation_rates=(3, 6, 12), growth_channels=8, projection_channels=32)
    assert cascade_receptive_field(cfg) == 43  # 1 + 6 + 12 + 24
    par = ParallelPyramidConfig(dilation_rates=(3, 6, 12), branch_channels=8)
    assert parallel_receptive_field(par) == 25
    assert cascade_receptive_field(cfg) > parallel_receptive_field(par)


def _grad_support_width(grad: np.ndarray) -> int:
    rows = np.where(np.abs(grad).sum(axis=(0, 1, 3)) > 0)[0]
    cols = np.where(np.abs(grad).sum(axis=(0, 1, 2)) > 0)[0]
    assert rows.size and cols.size
    assert rows.max() - rows.min() == cols.max() - cols.min()
    return int(rows.max() - rows.min() + 1)


def _positive_weights(units):
    for unit in units:
        for _, t in unit.conv.tensors():
            t.data[:] = np.abs(t.data) + 0.01


@pytest.mark.parametrize("rates,expected", [((1, 2), 7), ((3, 6, 12), 43)])
def test_cascade_receptive_field_impulse_oracle(rates, expected):
    # positive weights + eval-mode norm keep every ReLU active, so the
    # gradient footprint of one output pixel is exactly the receptive field
    cfg, w = make_cascade(rates, 2, 2, 1, seed=47)
    _positive_weights(w.layers + [w.projection])
    n = expected + 6
    center = n // 2
    x = Tensor(np.ones((1, 1, n, n)), requires_grad=True)
    probe = np.zeros((1, 2, n, n))
    probe[:, :, center, center] = 1.0
    (dense_cascade(x, cfg, w, training=False) * Tensor(probe)).sum().backward()
    assert _grad_support_width(x.grad) == expected == cascade_receptive_field(cfg)


def test_parallel_receptive_field_impulse_oracle():
    cfg = ParallelPyramidConfig(dilation_rates=(3, 6, 12), branch_channels=2)
    w = init_parallel_pyramid(cfg, 1, np.random.default_rng(48))
    _positive_weights(w.branches + [w.projection])
    n = 31
    x = Tensor(np.ones((1, 1, n, n)), requires_grad=True)
    probe = np.zeros((1, 2, n, n))
    probe[:, :, n // 2, n // 2] = 1.0
    (parallel_pyramid(x, cfg, w, training=False) * Tensor(probe)).sum().backward()
    assert _grad_support_width(x.grad) == 25 == parallel_receptive_field(cfg)


# -- parallel pyramid ---------------------------------------------------------


def test_parallel_pyramid_shapes():
    cfg = ParallelPyramidConfig(dilation_rates=(2, 4, 6), branch_channels=5)
    w = init_parallel_pyramid(cfg, 3, np.random.default_rng(49))
    x = Tensor(np.random.default_rng(50).normal(size=(2, 3, 13, 13)))
    out = parallel_pyramid(x, cfg, w)
    assert out.shape == (2, 5, 13, 13)
    assert w.projection.conv.spec.in_channels == 15


def test_parallel_pyramid_image_pooling_branch():
    cfg = ParallelPyramidConfig(dilation_rates=(2, 4), branch_channels=4, include_image_pooling=True)
    w = init_parallel_pyramid(cfg, 3, np.random.default_rng(51))
    assert w.image_pool is not None and w.image_pool.norm is None
    assert w.projection.conv.spec.in_channels == 12
    # batch of one must survive training mode (the pooling branch sees 1x1 maps)
    x = Tensor(np.random.default_rng(52).normal(size=(1, 3, 8, 8)))
    out = parallel_pyramid(x, cfg, w, training=True)
    assert out.shape == (1, 4, 8, 8)


def test_single_branch_degenerates_to_plain_conv():
    x = Tensor(np.random.default_rng(53).normal(size=(1, 3, 9, 9)))
    kernel = Tensor(np.random.default_rng(54).normal(size=(4, 3, 3, 3)))
    eye = np.zeros((4, 4, 1, 1))
    eye[np.arange(4), np.arange(4)] = 1.0

    cfg = ParallelPyramidConfig(dilation_rates=(1,), branch_channels=4)
    branch = ConvBnUnit(
        conv=ConvWeights(spec=ConvSpec(3, 3, 4, padding=1, has_bias=False), standard=kernel),
        norm=None, act=False,
    )
    projection = ConvBnUnit(
        conv=ConvWeights(spec=ConvSpec(1, 4, 4, has_bias=False), standard=Tensor(eye)),
        norm=None, act=False,
    )
    weights = ParallelPyramidWeights(in_channels=3, branches=[branch], projection=projection)
    out = parallel_pyramid(x, cfg, weights)
    np.testing.assert_allclose(out.data, conv2d(x, kernel, padding=1).data, atol=1e-12)


def test_parameter_names_are_unique_and_prefixed():
    cfg, w = make_cascade((1, 2), 3, 4, 4)
    names = [n for n, _ in dense_cascade_parameters(w, "pyr")]
    assert len(names) == len(set(names))
    assert "pyr.layer0.depthwise" in names and "pyr.projection.standard" in names

    pcfg = ParallelPyramidConfig(dilation_rates=(2, 4), branch_channels=4, include_image_pooling=True)
    pw = init_parallel_pyramid(pcfg, 3, np.random.default_rng(55))
    pnames = [n for n, _ in parallel_pyramid_parameters(pw, "pyr")]
    assert len(pnames) == len(set(pnames))
    assert "pyr.branch1.standard" in pnames and "pyr.pool.bias" in pnames
