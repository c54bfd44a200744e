"""Operation counting: cost formulas, the reference table, model profiles."""

from fractions import Fraction

import numpy as np
import pytest

from roadseg import DomainError, ShapeError
from roadseg.model import BackboneConfig, ModelConfig, count_parameters, toy_config
from roadseg.profiler import (
    REFERENCE_COMPARISON,
    ModelProfile,
    OpCount,
    format_profile,
    ops_separable,
    ops_standard,
    profile_json,
    profile_model,
    reference_comparison_text,
    separable_ratio,
)
from roadseg.pyramid import DenseCascadeConfig, ParallelPyramidConfig

# -- formulas -----------------------------------------------------------------


def test_ops_standard_exact_products():
    assert ops_standard(1, 1, 1, 1, 1) == 1
    assert ops_standard(512, 512, 3, 3, 64) == 512 * 512 * 9 * 3 * 64 == 452_984_832
    # k=1 degenerates to the pointwise count
    assert ops_standard(7, 5, 1, 11, 13) == 7 * 5 * 11 * 13


def test_ops_separable_reference_figures():
    assert ops_separable(512, 512, 3, 3, 64) == (7_077_888, 50_331_648, 57_409_536)


def test_ops_separable_k1_degeneration():
    dw, pw, total = ops_separable(6, 4, 1, 5, 9)
    assert dw == 6 * 4 * 5
    assert pw == 6 * 4 * 5 * 9
    assert total == 6 * 4 * 5 * (1 + 9)


@pytest.mark.parametrize("fn", [ops_standard, ops_separable])
@pytest.mark.parametrize("bad_index", range(5))
def test_ops_reject_non_positive_dims(fn, bad_index):
    args = [4, 4, 3, 2, 8]
    args[bad_index] = 0
    with pytest.raises(DomainError):
        fn(*args)
    args[bad_index] = -3
    with pytest.raises(DomainError):
        fn(*args)


def test_ratio_identity_on_random_tuples():
    rng = np.random.default_rng(300)
    for _ in range(100):
        h, w = rng.integers(1, 64, size=2)
        k = int(rng.integers(1, 9))
        c_in, c_out = (int(v) for v in rng.integers(1, 128, size=2))
        total = ops_separable(int(h), int(w), k, c_in, c_out)[2]
        std = ops_standard(int(h), int(w), k, c_in, c_out)
        assert Fraction(total, std) == separable_ratio(k, c_out)
        assert separable_ratio(k, c_out) == Fraction(1, c_out) + Fraction(1, k * k)


def test_counts_stay_exact_for_wide_dims():
    # 2**16-sized maps must not overflow or round
    n = ops_standard(2**16, 2**16, 3, 256, 256)
    assert n == (2**32) * 9 * 256 * 256
    assert isinstance(n, int)


# -- the frozen reference table -----------------------------------------------


def test_reference_table_quotes_the_canonical_figures():
    text = reference_comparison_text()
    for token in ["151,165,440", "7,077,888", "50,331,648", "57,409,536", "0.3798", "0.38"]:
        assert token in text, token
    quoted = REFERENCE_COMPARISON["separable"] / REFERENCE_COMPARISON["standard_quoted"]
    assert abs(quoted - 0.3798) < 1e-4
    # the quoted standard figure is a frozen constant, not the direct product;
    # the table discloses the recomputed product alongside it
    assert "452,984,832" in text


def test_reference_separable_figures_match_the_formula():
    r = REFERENCE_COMPARISON
    dw, pw, total = ops_separable(r["h"], r["w"], r["k"], r["c_in"], r["c_out"])
    assert (dw, pw, total) == (r["depthwise"], r["pointwise"], r["separable"])


# -- model profiles -----------------------------------------------------------


def _dense_cfg():
    return toy_config("dense")


def test_profile_parameter_totals_match_the_built_model():
    configs = [
        toy_config("dense"),
        toy_config("parallel"),
        ModelConfig(),
        ModelConfig(pyramid=ParallelPyramidConfig(include_image_pooling=True)),
    ]
    for cfg in configs:
        profile = profile_model(cfg, input_size=(64, 64))
        assert profile.total_parameters == count_parameters(cfg)


def test_profile_rows_match_single_layer_formulas():
    cfg = _dense_cfg()
    profile = profile_model(cfg, input_size=(64, 64))
    rows = {l.label: l for l in profile.layers}

    assert rows["backbone.stem"].multiply_accumulates == ops_standard(32, 32, 3, 3, 16)
    assert rows["decoder1"].multiply_accumulates == ops_standard(
        16, 16, 3, cfg.concat_width, cfg.decoder_channels
    )
    assert rows["head"].multiply_accumulates == ops_standard(16, 16, 1, 64, 1)

    # dense cascade layer l consumes the grown channel count c0 + l*g
    pyr = cfg.pyramid
    for l in range(3):
        c_in = 64 + l * pyr.growth_channels
        assert pyr.layer_in_channels(l, 64) == c_in
        expected = ops_separable(4, 4, 3, c_in, pyr.growth_channels)[2]
        assert rows[f"pyramid.layer{l}"].multiply_accumulates == expected


def test_every_separable_row_obeys_the_swap_identity():
    profile = profile_model(_dense_cfg(), input_size=(64, 64))
    seen = 0
    for row in profile.layers:
        if not row.separable:
            assert row.standard_equivalent == row.multiply_accumulates
            continue
        seen += 1
        ratio = Fraction(row.multiply_accumulates, row.standard_equivalent)
        # ratio must be exactly 1/9 + 1/c_out for an integral c_out
        residue = ratio - Fraction(1, 9)
        assert residue > 0 and residue.numerator == 1
        c_out = residue.denominator
        assert separable_ratio(3, c_out) == ratio
    assert seen == 6 + 3  # six backbone units + three cascade layers


def test_dilation_rates_never_change_counts():
    a = ModelConfig(
        backbone=toy_config().backbone, se_reduction=2, decoder_channels=64,
        pyramid=DenseCascadeConfig((3, 6, 12), growth_channels=8, projection_channels=32),
    )
    b = ModelConfig(
        backbone=toy_config().backbone, se_reduction=2, decoder_channels=64,
        pyramid=DenseCascadeConfig((1, 2, 3), growth_channels=8, projection_channels=32),
    )
    assert profile_model(a, (64, 64)) == profile_model(b, (64, 64))


def test_profile_input_validation():
    with pytest.raises(ShapeError):
        profile_model(_dense_cfg(), input_size=(40, 64))
    with pytest.raises(DomainError):
        profile_model(_dense_cfg(), input_size=(0, 64))


def test_opcount_rejects_negative():
    with pytest.raises(DomainError):
        OpCount("x", -1, 0, False, 0)


def test_format_and_json_cover_every_layer():
    profile = profile_model(_dense_cfg(), input_size=(64, 64))
    text = format_profile(profile)
    for row in profile.layers:
        assert row.label in text
    assert "total" in text and "savings ratio" in text
    assert float(profile.savings_ratio) < 1.0  # separable layers do save

    blob = profile_json(profile)
    assert blob["total_parameters"] == profile.total_parameters
    assert len(blob["layers"]) == len(profile.layers)
    assert blob["savings_ratio"] == pytest.approx(float(profile.savings_ratio))


def test_profile_at_double_resolution_scales_conv_rows():
    small = profile_model(_dense_cfg(), (64, 64))
    big = profile_model(_dense_cfg(), (128, 128))
    rows_small = {l.label: l for l in small.layers}
    for row in big.layers:
        if row.label == "se":  # gating network works on pooled 1x1 maps
            assert row.multiply_accumulates == rows_small["se"].multiply_accumulates
        else:
            assert row.multiply_accumulates == 4 * rows_small[row.label].multiply_accumulates
        assert row.parameters == rows_small[row.label].parameters
