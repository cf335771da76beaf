"""
Correctness-first reference execution.

Every kernel here is written for readability on small tensors; none of them
is meant to be fast. Activations accept Python scalars (returning floats) or
numpy arrays (applied elementwise).
"""

from __future__ import annotations

import logging
from typing import Any, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._types import FloatArray, RngLike
from .archgraph import GraphSpec, infer_shapes
from .enums import ActivationKind, Mode
from .errors import InvalidBlockSize, MissingEntry, TensorShapeError
from .layers import (
    SPP,
    Activation,
    Add,
    AvgPool,
    BatchNorm,
    Concat,
    CoordConv,
    Conv2d,
    DeformConv2d,
    DropBlock,
    MaxPool,
    ShapeNCHW,
    UpsampleNearest2x,
)
from .utils import make_rng

__all__ = (
    "softplus",
    "sigmoid",
    "relu",
    "leaky_relu",
    "mish",
    "mish_grad",
    "silu",
    "silu_grad",
    "apply_activation",
    "conv2d_naive",
    "deform_conv2d_naive",
    "max_pool2d",
    "avg_pool2d",
    "upsample_nearest2x",
    "batch_norm",
    "spp",
    "coord_channels",
    "dropblock_mask",
    "drop_block",
    "init_weights",
    "forward",
)

log = logging.getLogger(__name__)

Weights = dict[str, dict[str, FloatArray]]


def _wrap(x: Any) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr, arr.ndim == 0 and not isinstance(x, np.ndarray)


def _unwrap(arr: np.ndarray, scalar: bool) -> Any:
    return float(arr) if scalar else arr


def softplus(x: Any) -> Any:
    """``ln(1 + e^x)`` as ``max(x, 0) + ln(1 + e^-|x|)``, finite for every finite ``x``."""

    arr, scalar = _wrap(x)
    return _unwrap(np.maximum(arr, 0) + np.log1p(np.exp(-np.abs(arr))), scalar)


def sigmoid(x: Any) -> Any:
    arr, scalar = _wrap(x)
    return _unwrap(0.5 * (1 + np.tanh(0.5 * arr)), scalar)


def relu(x: Any) -> Any:
    arr, scalar = _wrap(x)
    return _unwrap(np.maximum(arr, 0), scalar)


def leaky_relu(x: Any, slope: float = 0.1) -> Any:
    arr, scalar = _wrap(x)
    return _unwrap(np.where(arr >= 0, arr, arr * slope).astype(arr.dtype), scalar)


def mish(x: Any) -> Any:
    arr, scalar = _wrap(x)
    return _unwrap(arr * np.tanh(softplus(arr)), scalar)


def mish_grad(x: Any) -> Any:
    arr, scalar = _wrap(x)
    t = np.tanh(softplus(arr))
    return _unwrap(t + arr * (1 - t * t) * sigmoid(arr), scalar)


def silu(x: Any) -> Any:
    arr, scalar = _wrap(x)
    return _unwrap(arr * sigmoid(arr), scalar)


def silu_grad(x: Any) -> Any:
    arr, scalar = _wrap(x)
    s = sigmoid(arr)
    return _unwrap(s * (1 + arr * (1 - s)), scalar)


def apply_activation(kind: ActivationKind, x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    match kind:
        case ActivationKind.relu:
            return relu(x)
        case ActivationKind.leaky_relu:
            return leaky_relu(x, slope)
        case ActivationKind.mish:
            return mish(x)
        case ActivationKind.silu:
            return silu(x)
        case ActivationKind.sigmoid:
            return sigmoid(x)
        case ActivationKind.linear:
            return x


def _check_rank(op: str, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise TensorShapeError(op, "N x C x H x W", x.shape)


def _out_extent(op: str, size: int, kernel: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise TensorShapeError(op, f"an extent >= {kernel - 2 * pad}", size)
    return out


def conv2d_naive(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    pad: int = 0,
    groups: int = 1,
) -> FloatArray:
    """
    Direct convolution of ``x`` (N, C, H, W) with ``weight`` (O, C/groups, kh, kw).

    The sum over kernel taps and input channels is accumulated in float64.
    """

    _check_rank("conv2d", x)
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups or cg != c // groups:
        expected = f"weight of shape ({o}, {c // groups}, kh, kw) for groups={groups}"
        raise TensorShapeError("conv2d", expected, weight.shape)

    ho = _out_extent("conv2d", h, kh, stride, pad)
    wo = _out_extent("conv2d", w, kw, stride, pad)
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, o, ho, wo), dtype=np.float64)

    og = o // groups
    for g in range(groups):
        xs = xp[:, g * cg : (g + 1) * cg]
        ws = weight[g * og : (g + 1) * og].astype(np.float64)
        for ky in range(kh):
            for kx in range(kw):
                patch = xs[:, :, ky : ky + stride * (ho - 1) + 1 : stride, kx : kx + stride * (wo - 1) + 1 : stride]
                out[:, g * og : (g + 1) * og] += np.einsum("nchw,oc->nohw", patch, ws[:, :, ky, kx])

    if bias is not None:
        out += bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def _bilinear(x: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """
    Samples ``x`` (N, C, H, W) at fractional positions ``ys``/``xs`` (N, Ho, Wo).

    Corners outside the map read zero. Returns (N, C, Ho, Wo).
    """

    n, _, h, w = x.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    batch = np.arange(n)[:, None, None]

    out = np.zeros((n, x.shape[1], *ys.shape[1:]), dtype=np.float64)
    for dy, dx, weight in ((0, 0, (1 - wy) * (1 - wx)), (0, 1, (1 - wy) * wx), (1, 0, wy * (1 - wx)), (1, 1, wy * wx)):
        yy = y0 + dy
        xx = x0 + dx
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        values = x[batch, :, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]  # (N, Ho, Wo, C)
        values = np.where(inside[..., None], values, 0.0)
        out += np.moveaxis(values, -1, 1) * weight[:, None]
    return out


def deform_conv2d_naive(
    x: np.ndarray,
    weight: np.ndarray,
    offsets: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    pad: int = 0,
) -> FloatArray:
    """
    Deformable convolution.

    ``offsets`` is (N, 2*kh*kw, Ho, Wo); channels ``2k`` and ``2k+1`` hold the
    (dy, dx) displacement of kernel tap ``k = ky*kw + kx``. Taps are sampled
    bilinearly and read zero outside the input.
    """

    _check_rank("deform_conv2d", x)
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise TensorShapeError("deform_conv2d", f"weight of shape ({o}, {c}, kh, kw)", weight.shape)

    ho = _out_extent("deform_conv2d", h, kh, stride, pad)
    wo = _out_extent("deform_conv2d", w, kw, stride, pad)
    if offsets.shape != (n, 2 * kh * kw, ho, wo):
        raise TensorShapeError("deform_conv2d", (n, 2 * kh * kw, ho, wo), offsets.shape)

    x64 = x.astype(np.float64)
    offsets = offsets.astype(np.float64)
    base_y = (np.arange(ho) * stride - pad)[None, :, None]
    base_x = (np.arange(wo) * stride - pad)[None, None, :]

    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            k = ky * kw + kx
            ys = base_y + ky + offsets[:, 2 * k]
            xs = base_x + kx + offsets[:, 2 * k + 1]
            sampled = _bilinear(x64, ys, xs)
            out += np.einsum("nchw,oc->nohw", sampled, weight[:, :, ky, kx].astype(np.float64))

    if bias is not None:
        out += bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    return sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]


def max_pool2d(x: np.ndarray, kernel: int, stride: int = 1, pad: int = 0) -> FloatArray:
    _check_rank("max_pool2d", x)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    return _windows(xp, kernel, stride).max(axis=(-2, -1)).astype(x.dtype)


def avg_pool2d(
    x: np.ndarray,
    kernel: int = 2,
    stride: int = 2,
    pad: int = 0,
    *,
    global_pool: bool = False,
    ceil_mode: bool = False,
) -> FloatArray:
    """Average pooling; partial windows from ``ceil_mode`` average their valid taps only."""

    _check_rank("avg_pool2d", x)
    if global_pool:
        return x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype)

    h, w = x.shape[2:]
    extra_h = extra_w = 0
    if ceil_mode:
        extra_h = (-(h + 2 * pad - kernel)) % stride
        extra_w = (-(w + 2 * pad - kernel)) % stride
    widths = ((0, 0), (0, 0), (pad, pad + extra_h), (pad, pad + extra_w))
    total = _windows(np.pad(x.astype(np.float64), widths), kernel, stride).sum(axis=(-2, -1))
    valid = np.pad(np.ones((1, 1, h, w)), widths)
    count = _windows(valid, kernel, stride).sum(axis=(-2, -1))
    return (total / count).astype(x.dtype)


def upsample_nearest2x(x: np.ndarray) -> FloatArray:
    _check_rank("upsample_nearest2x", x)
    return x.repeat(2, axis=2).repeat(2, axis=3)


def batch_norm(
    x: np.ndarray,
    gamma: np.ndarray | None = None,
    beta: np.ndarray | None = None,
    mean: np.ndarray | None = None,
    var: np.ndarray | None = None,
    eps: float = 1e-5,
) -> FloatArray:
    """Inference-form batch norm; missing statistics default to the identity (mean 0, var 1, gamma 1, beta 0)."""

    c = x.shape[1]
    gamma = np.ones(c) if gamma is None else gamma
    beta = np.zeros(c) if beta is None else beta
    mean = np.zeros(c) if mean is None else mean
    var = np.ones(c) if var is None else var
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return (x * scale[None, :, None, None] + shift[None, :, None, None]).astype(x.dtype)


def spp(x: np.ndarray, pool_sizes: tuple[int, ...] = (5, 9, 13)) -> FloatArray:
    return np.concatenate([x] + [max_pool2d(x, k, 1, k // 2) for k in pool_sizes], axis=1)


def coord_channels(n: int, h: int, w: int, dtype: Any = np.float32) -> FloatArray:
    """(n, 2, h, w): channel 0 holds x and channel 1 holds y, both spanning [-1, 1]."""

    xs = np.broadcast_to(np.linspace(-1, 1, w, dtype=dtype)[None, :], (h, w))
    ys = np.broadcast_to(np.linspace(-1, 1, h, dtype=dtype)[:, None], (h, w))
    return np.broadcast_to(np.stack([xs, ys])[None], (n, 2, h, w)).copy()


def _seed_rate(h: int, w: int, block_size: int, drop: float) -> float:
    # seeds covering each pixel; a pixel survives only if all of them stay unset
    ys = np.convolve(np.ones(h - block_size + 1), np.ones(block_size))
    xs = np.convolve(np.ones(w - block_size + 1), np.ones(block_size))
    covers = np.outer(ys, xs)

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if 1 - np.mean((1 - mid) ** covers) < drop:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def dropblock_mask(rng: RngLike, shape: tuple[int, ...], block_size: int, keep_prob: float) -> FloatArray:
    """
    A binary DropBlock mask over the last two axes of ``shape``.

    Block seeds are drawn only where a full ``block_size`` square fits, so
    every zero belongs to a fully zero square. The seed rate is solved so the
    expected dropped fraction, overlapping blocks included, is ``1 - keep_prob``.
    """

    if len(shape) < 2:
        raise InvalidBlockSize(block_size, f"mask shape {shape!r} has no spatial axes")
    h, w = shape[-2:]
    if block_size < 1 or block_size % 2 == 0:
        raise InvalidBlockSize(block_size, "must be odd and positive")
    if block_size > min(h, w):
        raise InvalidBlockSize(block_size, f"larger than the {h}x{w} feature map")
    if not 0 < keep_prob <= 1:
        raise ValueError(f"keep_prob must lie in (0, 1], received {keep_prob}")

    if keep_prob == 1:
        return np.ones(shape, dtype=np.float32)

    valid_h = h - block_size + 1
    valid_w = w - block_size + 1
    gamma = _seed_rate(h, w, block_size, 1 - keep_prob)

    r = block_size // 2
    seeds = np.zeros(shape, dtype=np.float32)
    seeds[..., r : r + valid_h, r : r + valid_w] = rng.random((*shape[:-2], valid_h, valid_w)) < gamma

    flat = seeds.reshape(-1, 1, h, w)
    dropped = max_pool2d(flat, block_size, 1, r).reshape(shape)
    return (1 - dropped).astype(np.float32)


def drop_block(x: np.ndarray, rng: RngLike, block_size: int = 3, keep_prob: float = 0.9) -> FloatArray:
    """Applies a fresh mask to ``x`` and rescales survivors by mask area over kept count."""

    mask = dropblock_mask(rng, x.shape, block_size, keep_prob)
    kept = mask.sum()
    if kept == 0:
        return np.zeros_like(x)
    return (x * mask * (mask.size / kept)).astype(x.dtype)


def init_weights(graph: GraphSpec, seed: int | None = 0) -> Weights:
    """
    Deterministic weights for every parametrized node.

    Convolutions draw LeCun-normal kernels with zero bias; deformable offset
    predictors and batch norms start at the identity.
    """

    rng = make_rng(seed)
    weights: Weights = {}
    for node in graph.nodes:
        match node:
            case Conv2d() | CoordConv() | DeformConv2d():
                in_ch = node.in_ch + 2 if isinstance(node, CoordConv) else node.in_ch
                shape = (node.out_ch, in_ch // node.groups, node.kernel, node.kernel)
                std = 1.0 / np.sqrt(node.fan_in)
                entry = {"weight": rng.standard_normal(shape, dtype=np.float32) * np.float32(std)}
                if node.has_bias:
                    entry["bias"] = np.zeros(node.out_ch, dtype=np.float32)
                if isinstance(node, DeformConv2d):
                    entry["offset_weight"] = np.zeros(
                        (node.offset_channels, node.in_ch, node.kernel, node.kernel), dtype=np.float32
                    )
                    entry["offset_bias"] = np.zeros(node.offset_channels, dtype=np.float32)
                weights[node.name] = entry
            case BatchNorm():
                weights[node.name] = {
                    "gamma": np.ones(node.ch, dtype=np.float32),
                    "beta": np.zeros(node.ch, dtype=np.float32),
                    "mean": np.zeros(node.ch, dtype=np.float32),
                    "var": np.ones(node.ch, dtype=np.float32),
                }
    return weights


def forward(
    graph: GraphSpec,
    entries: Mapping[str, np.ndarray],
    mode: Mode = Mode.eval,
    rng: RngLike | None = None,
    *,
    weights: Weights | None = None,
    keep_all: bool = False,
) -> dict[str, FloatArray]:
    """
    Evaluates ``graph`` node by node.

    Parameters
    -----------
    entries: Mapping[str, np.ndarray]
        One NCHW tensor per graph input
    mode: Mode
        DropBlock is the identity in ``eval`` mode and draws masks from ``rng`` in ``train`` mode
    weights: Weights | None
        Per-node parameter arrays; defaults to ``init_weights(graph)``
    keep_all: bool
        Return every intermediate tensor instead of only the graph outputs

    Raises
    -----------
    MissingEntry
        A graph input has no tensor
    ShapeMismatch
        The entry shapes do not fit the graph
    """

    for name in graph.inputs:
        if name not in entries:
            raise MissingEntry(name)
        if entries[name].ndim != 4:
            raise TensorShapeError(f"forward[{name}]", "N x C x H x W", entries[name].shape)
    infer_shapes(graph, {name: ShapeNCHW(*entries[name].shape) for name in graph.inputs})

    if mode is Mode.train and rng is None and graph.of_kind(DropBlock):
        raise ValueError("train-mode forward of a graph with DropBlock needs an rng")
    weights = init_weights(graph) if weights is None else weights

    values: dict[str, np.ndarray] = {name: np.asarray(entries[name], dtype=np.float32) for name in graph.inputs}
    for node in graph.nodes:
        ins = [values[src] for src in node.inputs]
        params = weights.get(node.name, {})
        match node:
            case CoordConv():
                x = ins[0]
                coords = coord_channels(x.shape[0], x.shape[2], x.shape[3], dtype=x.dtype)
                out = conv2d_naive(
                    np.concatenate([coords, x], axis=1), params["weight"], params.get("bias"), node.stride, node.pad
                )
            case DeformConv2d():
                offsets = conv2d_naive(ins[0], params["offset_weight"], params["offset_bias"], node.stride, node.pad)
                out = deform_conv2d_naive(ins[0], params["weight"], offsets, params.get("bias"), node.stride, node.pad)
            case Conv2d():
                out = conv2d_naive(ins[0], params["weight"], params.get("bias"), node.stride, node.pad, node.groups)
            case BatchNorm():
                out = batch_norm(
                    ins[0], params.get("gamma"), params.get("beta"), params.get("mean"), params.get("var"), node.eps
                )
            case Activation():
                out = apply_activation(node.act, ins[0], node.slope)
            case UpsampleNearest2x():
                out = upsample_nearest2x(ins[0])
            case Concat():
                out = np.concatenate(ins, axis=1)
            case Add():
                out = np.sum(ins, axis=0, dtype=np.float32)
            case MaxPool():
                out = max_pool2d(ins[0], node.kernel, node.stride, node.pad)
            case AvgPool():
                out = avg_pool2d(
                    ins[0], node.kernel, node.stride, node.pad, global_pool=node.global_pool, ceil_mode=node.ceil_mode
                )
            case SPP():
                out = spp(ins[0], node.pool_sizes)
            case DropBlock():
                if mode is Mode.eval:
                    out = ins[0]
                else:
                    size = min(node.block_size, *ins[0].shape[2:])
                    size -= 1 - size % 2
                    out = drop_block(ins[0], rng, size, node.keep_prob)  # type: ignore
            case _:
                raise TypeError(f"no executor for {node!r}")
        values[node.name] = out

    if keep_all:
        return values
    return {name: values[name] for name in graph.outputs}
