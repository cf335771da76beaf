from __future__ import annotations

import pytest

from pptk import (
    SPP,
    AvgPool,
    BatchNorm,
    Concat,
    Conv2d,
    CoordConv,
    DeformConv2d,
    DropBlock,
    InvalidLayer,
    ShapeMismatch,
    ShapeNCHW,
    UpsampleNearest2x,
)


def test_shape_rejects_empty_extent():
    with pytest.raises(ValueError):
        ShapeNCHW(1, 0, 4, 4)


def test_conv_params_and_cost():
    conv = Conv2d(name="c", inputs=("x",), in_ch=3, out_ch=16, kernel=3, pad=1, has_bias=True)
    shape = ShapeNCHW(1, 3, 32, 32)
    out = conv.out_shape([shape])

    assert out == ShapeNCHW(1, 16, 32, 32)
    assert conv.params() == 448
    assert conv.macs([shape], out) == 442_368
    # two flops per MAC plus one bias add per output element
    assert conv.flops([shape], out) == 2 * 442_368 + 16 * 32 * 32


def test_conv_without_bias_flops():
    conv = Conv2d(name="c", inputs=("x",), in_ch=3, out_ch=16, kernel=3, pad=1)
    shape = ShapeNCHW(1, 3, 32, 32)
    assert conv.flops([shape], conv.out_shape([shape])) == 884_736


def test_conv_rejects_wrong_channels():
    conv = Conv2d(name="c", inputs=("x",), in_ch=8, out_ch=16, kernel=1)
    with pytest.raises(ShapeMismatch):
        conv.out_shape([ShapeNCHW(1, 3, 8, 8)])


def test_strided_conv_shape():
    conv = Conv2d(name="c", inputs=("x",), in_ch=3, out_ch=32, kernel=3, stride=2, pad=1)
    assert conv.out_shape([ShapeNCHW(2, 3, 640, 640)]) == ShapeNCHW(2, 32, 320, 320)


def test_conv_groups_must_divide():
    with pytest.raises(InvalidLayer):
        Conv2d(name="c", inputs=("x",), in_ch=6, out_ch=4, kernel=1, groups=4).check()


def test_deform_conv_counts_offset_predictor():
    dcn = DeformConv2d(name="d", inputs=("x",), in_ch=4, out_ch=8, kernel=3, pad=1)
    assert dcn.offset_channels == 18
    assert dcn.offset_params() == 4 * 9 * 18 + 18
    assert dcn.params() == 4 * 9 * 8 + 4 * 9 * 18 + 18


def test_coord_conv_sees_two_extra_channels():
    coord = CoordConv(name="cc", inputs=("x",), in_ch=4, out_ch=8, kernel=1)
    assert coord.params() == 6 * 8
    assert coord.out_shape([ShapeNCHW(1, 4, 5, 5)]) == ShapeNCHW(1, 8, 5, 5)


def test_batch_norm_params_and_statistics():
    bn = BatchNorm(name="bn", inputs=("x",), ch=64)
    assert bn.params() == 128
    assert bn.statistics() == 128


def test_upsample_doubles_spatial():
    up = UpsampleNearest2x(name="u", inputs=("x",))
    assert up.out_shape([ShapeNCHW(1, 256, 20, 20)]) == ShapeNCHW(1, 256, 40, 40)


def test_concat_sums_channels():
    cat = Concat(name="cat", inputs=("a", "b"))
    assert cat.out_shape([ShapeNCHW(1, 256, 40, 40), ShapeNCHW(1, 1024, 40, 40)]) == ShapeNCHW(1, 1280, 40, 40)


def test_concat_rejects_spatial_mismatch():
    cat = Concat(name="cat", inputs=("a", "b"))
    with pytest.raises(ShapeMismatch):
        cat.out_shape([ShapeNCHW(1, 256, 40, 40), ShapeNCHW(1, 256, 20, 20)])


def test_concat_needs_two_inputs():
    with pytest.raises(InvalidLayer):
        Concat(name="cat", inputs=("a",)).check()


def test_spp_quadruples_channels():
    spp = SPP(name="spp", inputs=("x",))
    assert spp.out_shape([ShapeNCHW(1, 512, 20, 20)]) == ShapeNCHW(1, 2048, 20, 20)
    assert spp.params() == 0


def test_avg_pool_ceil_mode_keeps_partial_windows():
    pool = AvgPool(name="p", inputs=("x",), kernel=2, stride=2, ceil_mode=True)
    assert pool.out_shape([ShapeNCHW(1, 4, 5, 5)]) == ShapeNCHW(1, 4, 3, 3)


def test_global_avg_pool():
    pool = AvgPool(name="p", inputs=("x",), global_pool=True)
    assert pool.out_shape([ShapeNCHW(1, 2048, 20, 20)]) == ShapeNCHW(1, 2048, 1, 1)


@pytest.mark.parametrize("block_size, keep_prob", [(4, 0.9), (0, 0.9), (3, 0.0), (3, 1.5)])
def test_drop_block_rejects_bad_config(block_size: int, keep_prob: float):
    with pytest.raises(InvalidLayer):
        DropBlock(name="db", inputs=("x",), block_size=block_size, keep_prob=keep_prob).check()
