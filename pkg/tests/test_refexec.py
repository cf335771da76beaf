from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from pptk import (
    STANDARD_POINTS,
    InvalidBlockSize,
    MissingEntry,
    Mode,
    avg_pool2d,
    build_pan_neck,
    build_variant,
    conv2d_naive,
    coord_channels,
    deform_conv2d_naive,
    drop_block,
    dropblock_mask,
    forward,
    gradcheck,
    init_weights,
    max_pool2d,
    mish,
    mish_grad,
    remove_kinds,
    silu,
    silu_grad,
    softplus,
    spp,
    upsample_nearest2x,
)

NECK_ENTRIES = {"C3": (1, 512, 8, 8), "C4": (1, 1024, 4, 4), "C5": (1, 2048, 2, 2)}


def _loop_conv(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, oc, i, j] = np.sum(patch * w[oc])
    return out


def test_mish_values():
    assert mish(0.0) == 0.0
    assert mish(1.0) == pytest.approx(0.865098, abs=1e-6)
    assert mish(-1.0) == pytest.approx(-0.303401, abs=1e-6)


def test_silu_values():
    assert silu(0.0) == 0.0
    assert silu(1.0) == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)


def test_activations_are_elementwise_on_arrays():
    x = np.linspace(-3, 3, 7)
    assert np.allclose(mish(x), [mish(float(v)) for v in x])
    assert isinstance(mish(0.5), float)


def test_softplus_is_finite_for_large_inputs():
    assert softplus(1000.0) == 1000.0
    assert softplus(-1000.0) == 0.0
    assert math.isfinite(mish(-1000.0))


@pytest.mark.parametrize("func, grad", [(mish, mish_grad), (silu, silu_grad)])
def test_activation_gradients(func, grad, rng: np.random.Generator):
    points = [*STANDARD_POINTS, *rng.uniform(-6, 6, 50).tolist()]
    assert gradcheck(func, grad, points) < 1e-4


@pytest.mark.parametrize("func, grad", [(mish, mish_grad), (silu, silu_grad)])
@pytest.mark.parametrize("x", [-2.0, -0.5, 0.3, 1.0, 3.0])
def test_activation_gradient_at_standard_points(func, grad, x: float):
    assert x in STANDARD_POINTS
    assert gradcheck(func, grad, [x]) < 1e-5


@pytest.mark.parametrize("stride, pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_direct_loops(stride: int, pad: int, rng: np.random.Generator):
    x = rng.standard_normal((2, 3, 7, 7)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    out = conv2d_naive(x, w, stride=stride, pad=pad)
    assert np.allclose(out, _loop_conv(x.astype(np.float64), w.astype(np.float64), stride, pad), atol=1e-4)


def test_conv2d_bias(rng: np.random.Generator):
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    w = np.zeros((3, 2, 1, 1), dtype=np.float32)
    bias = np.array([1.0, -2.0, 0.5], dtype=np.float32)
    out = conv2d_naive(x, w, bias)
    assert np.array_equal(out, np.broadcast_to(bias[None, :, None, None], (1, 3, 4, 4)))


def test_deform_conv_with_zero_offsets_is_conv(rng: np.random.Generator):
    x = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    offsets = np.zeros((1, 18, 6, 6), dtype=np.float32)
    assert np.allclose(deform_conv2d_naive(x, w, offsets, pad=1), conv2d_naive(x, w, pad=1), atol=1e-5)


def test_deform_conv_integer_offset_shifts_samples(rng: np.random.Generator):
    x = rng.standard_normal((1, 1, 6, 6)).astype(np.float32)
    w = np.ones((1, 1, 1, 1), dtype=np.float32)
    offsets = np.zeros((1, 2, 6, 6), dtype=np.float32)
    offsets[:, 1] = 1.0  # every tap reads one column to the right

    out = deform_conv2d_naive(x, w, offsets)
    assert np.allclose(out[..., :5], x[..., 1:])
    # the last column samples outside the map
    assert np.allclose(out[..., 5], 0.0)


def test_max_pool_pads_with_negative_infinity():
    x = -np.ones((1, 1, 3, 3), dtype=np.float32)
    assert np.array_equal(max_pool2d(x, 3, 1, 1), x)


def test_avg_pool_ceil_mode_averages_valid_taps():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    out = avg_pool2d(x, 2, 2, ceil_mode=True)
    assert out.shape == (1, 1, 2, 2)
    assert out[0, 0].tolist() == [[2.0, 3.5], [6.5, 8.0]]


def test_upsample_nearest():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
    out = upsample_nearest2x(x)
    assert out.shape == (1, 1, 4, 4)
    assert out[0, 0, 0].tolist() == [1.0, 1.0, 2.0, 2.0]
    assert out[0, 0, 3].tolist() == [3.0, 3.0, 4.0, 4.0]


def test_spp_keeps_input_first(rng: np.random.Generator):
    x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
    out = spp(x)
    assert out.shape == (1, 8, 6, 6)
    assert np.array_equal(out[:, :2], x)


def test_coord_channels_span_unit_range():
    coords = coord_channels(2, 3, 5)
    assert coords.shape == (2, 2, 3, 5)
    assert coords[0, 0, 0].tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert coords[0, 1, :, 0].tolist() == [-1.0, 0.0, 1.0]


def test_dropblock_mask_zeros_form_full_blocks(rng: np.random.Generator):
    block = 5
    mask = dropblock_mask(rng, (4, 8, 32, 32), block, 0.8)
    assert set(np.unique(mask).tolist()) <= {0.0, 1.0}

    dropped = mask == 0
    full = sliding_window_view(dropped, (block, block), axis=(2, 3)).all(axis=(-2, -1))
    covered = np.zeros_like(dropped)
    for y, x in zip(*np.nonzero(full.any(axis=(0, 1)))):
        covered[..., y : y + block, x : x + block] |= full[..., y, x, None, None]
    assert np.array_equal(covered, dropped)


@pytest.mark.parametrize("block_size, keep_prob", [(3, 0.9), (5, 0.8), (7, 0.9)])
def test_dropblock_mask_zero_fraction(block_size: int, keep_prob: float):
    # 10^5 seeded 32x32 masks
    fractions = [
        1 - dropblock_mask(np.random.default_rng(seed), (1000, 1, 32, 32), block_size, keep_prob).mean()
        for seed in range(100)
    ]
    assert np.mean(fractions) == pytest.approx(1 - keep_prob, abs=0.02)


def test_dropblock_mask_keep_all(rng: np.random.Generator):
    assert np.all(dropblock_mask(rng, (1, 1, 8, 8), 3, 1.0) == 1.0)


@pytest.mark.parametrize("block_size", [0, 4, 11])
def test_dropblock_mask_rejects_block_size(block_size: int, rng: np.random.Generator):
    with pytest.raises(InvalidBlockSize):
        dropblock_mask(rng, (1, 1, 8, 8), block_size, 0.9)


def test_drop_block_preserves_total_activation(rng: np.random.Generator):
    x = np.ones((2, 4, 16, 16), dtype=np.float32)
    out = drop_block(x, rng, 3, 0.9)
    assert float(out.sum(dtype=np.float64)) == pytest.approx(x.size, rel=1e-5)


def test_init_weights_is_deterministic():
    graph = build_pan_neck()
    a, b = init_weights(graph, 7), init_weights(graph, 7)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[name]["weight"], b[name]["weight"]) for name in a if "weight" in a[name])


def test_eval_mode_ignores_dropblock(rng: np.random.Generator):
    graph = build_pan_neck()
    entries = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in NECK_ENTRIES.items()}
    weights = init_weights(graph, 0)

    with_db = forward(graph, entries, Mode.eval, weights=weights)
    without_db = forward(remove_kinds(graph), entries, Mode.eval, weights=weights)
    for name in graph.outputs:
        assert np.array_equal(with_db[name], without_db[name])


def test_train_mode_needs_rng(rng: np.random.Generator):
    graph = build_pan_neck()
    entries = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in NECK_ENTRIES.items()}
    with pytest.raises(ValueError):
        forward(graph, entries, Mode.train)


def test_train_mode_is_seeded(rng: np.random.Generator):
    graph = build_pan_neck()
    entries = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in NECK_ENTRIES.items()}
    weights = init_weights(graph, 0)

    first = forward(graph, entries, Mode.train, np.random.default_rng(3), weights=weights)
    second = forward(graph, entries, Mode.train, np.random.default_rng(3), weights=weights)
    assert all(np.array_equal(first[name], second[name]) for name in graph.outputs)


def test_missing_entry():
    graph = build_pan_neck()
    with pytest.raises(MissingEntry):
        forward(graph, {"C3": np.zeros(NECK_ENTRIES["C3"], dtype=np.float32)})


def test_full_detector_head_shapes(rng: np.random.Generator):
    graph = build_variant("E")
    image = rng.random((1, 3, 64, 64), dtype=np.float32)
    outputs = forward(graph, {"image": image})

    assert [outputs[name].shape for name in graph.outputs] == [(1, 258, 8, 8), (1, 258, 4, 4), (1, 258, 2, 2)]
    assert all(np.isfinite(out).all() for out in outputs.values())
