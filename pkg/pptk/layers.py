from __future__ import annotations

import math
from typing import ClassVar, Sequence, TypeAlias

import msgspec

from .enums import ActivationKind, Stage
from .errors import InvalidLayer, ShapeMismatch

__all__ = (
    "ShapeNCHW",
    "LayerSpec",
    "Conv2d",
    "DeformConv2d",
    "CoordConv",
    "BatchNorm",
    "Activation",
    "UpsampleNearest2x",
    "Concat",
    "Add",
    "MaxPool",
    "AvgPool",
    "SPP",
    "DropBlock",
    "Layer",
)


class ShapeNCHW(msgspec.Struct, frozen=True, array_like=True):
    n: int
    c: int
    h: int
    w: int

    def __post_init__(self) -> None:
        if min(self.n, self.c, self.h, self.w) < 1:
            raise ValueError(f"every extent must be >= 1, received {tuple(self)!r}")

    def __iter__(self):
        return iter((self.n, self.c, self.h, self.w))

    @property
    def elements(self) -> int:
        return self.n * self.c * self.h * self.w

    @property
    def spatial(self) -> int:
        return self.h * self.w

    def with_(self, *, c: int | None = None, h: int | None = None, w: int | None = None) -> ShapeNCHW:
        return ShapeNCHW(self.n, self.c if c is None else c, self.h if h is None else h, self.w if w is None else w)

    def __repr__(self) -> str:
        return f"{self.n}x{self.c}x{self.h}x{self.w}"


def _window(node: str, size: int, kernel: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ShapeMismatch(node, f"window k={kernel} s={stride} p={pad} does not fit extent {size}")
    return out


class LayerSpec(msgspec.Struct, frozen=True, kw_only=True, tag_field="kind"):
    """
    A single node of a :class:`~pptk.archgraph.GraphSpec`.

    Subclasses describe one layer kind each and know their own shape rule,
    parameter count and cost.
    """

    name: str
    inputs: tuple[str, ...]
    stage: Stage = Stage.neck

    arity: ClassVar[int | None] = 1

    def check(self) -> None:
        if self.arity is not None and len(self.inputs) != self.arity:
            raise InvalidLayer(self.name, f"expects {self.arity} input(s), received {len(self.inputs)}")

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        return shapes[0]

    def params(self) -> int:
        return 0

    def statistics(self) -> int:
        return 0

    def macs(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return 0

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return 0

    @property
    def kind(self) -> str:
        return self.__struct_config__.tag  # type: ignore

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} name={self.name!r} inputs={list(self.inputs)!r} stage={self.stage.value!r}>"


class _ConvLayer(LayerSpec, frozen=True, kw_only=True):
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    pad: int = 0
    groups: int = 1
    has_bias: bool = False

    @property
    def fan_in(self) -> int:
        return self.in_ch // self.groups * self.kernel * self.kernel

    @property
    def expected_in_ch(self) -> int:
        return self.in_ch

    def check(self) -> None:
        super().check()
        if min(self.in_ch, self.out_ch, self.kernel, self.stride, self.groups) < 1 or self.pad < 0:
            raise InvalidLayer(self.name, "channel counts, kernel, stride and groups must be positive")
        if self.in_ch % self.groups or self.out_ch % self.groups:
            raise InvalidLayer(self.name, f"groups={self.groups} must divide in_ch={self.in_ch} and out_ch={self.out_ch}")

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        (shape,) = shapes
        if shape.c != self.expected_in_ch:
            raise ShapeMismatch(self.name, f"expected {self.expected_in_ch} input channels, received {shape.c}")
        h = _window(self.name, shape.h, self.kernel, self.stride, self.pad)
        w = _window(self.name, shape.w, self.kernel, self.stride, self.pad)
        return ShapeNCHW(shape.n, self.out_ch, h, w)

    def params(self) -> int:
        return self.fan_in * self.out_ch + (self.out_ch if self.has_bias else 0)

    def macs(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return out.elements * self.fan_in

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return 2 * self.macs(shapes, out) + (out.elements if self.has_bias else 0)


class Conv2d(_ConvLayer, frozen=True, kw_only=True, tag="conv2d"):
    pass


class CoordConv(_ConvLayer, frozen=True, kw_only=True, tag="coord_conv"):
    """A convolution over its input with normalized x and y channels prepended.

    ``in_ch`` counts the wrapped feature channels only; the kernel sees ``in_ch + 2``.
    """

    @property
    def fan_in(self) -> int:
        return (self.in_ch + 2) // self.groups * self.kernel * self.kernel

    def check(self) -> None:
        super().check()
        if self.groups != 1:
            raise InvalidLayer(self.name, "CoordConv supports groups=1 only")


class DeformConv2d(_ConvLayer, frozen=True, kw_only=True, tag="deform_conv2d"):
    """
    A deformable convolution.

    The offset-predicting convolution (``in_ch -> 2*k*k`` channels, same
    kernel, stride and padding, with bias) is counted as part of this node.
    """

    def check(self) -> None:
        super().check()
        if self.groups != 1:
            raise InvalidLayer(self.name, "DeformConv2d supports groups=1 only")

    @property
    def offset_channels(self) -> int:
        return 2 * self.kernel * self.kernel

    def offset_params(self) -> int:
        return self.in_ch * self.kernel * self.kernel * self.offset_channels + self.offset_channels

    def params(self) -> int:
        return super().params() + self.offset_params()

    def macs(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        offset_macs = out.n * out.spatial * self.offset_channels * self.in_ch * self.kernel * self.kernel
        return super().macs(shapes, out) + offset_macs

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        offset_out = out.n * out.spatial * self.offset_channels
        # bilinear sampling: 4 taps and 3 lerps per sampled input value
        samples = out.n * out.spatial * self.in_ch * self.kernel * self.kernel
        return 2 * self.macs(shapes, out) + offset_out + (out.elements if self.has_bias else 0) + 7 * samples


class BatchNorm(LayerSpec, frozen=True, kw_only=True, tag="batch_norm"):
    ch: int
    eps: float = 1e-5

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        (shape,) = shapes
        if shape.c != self.ch:
            raise ShapeMismatch(self.name, f"expected {self.ch} channels, received {shape.c}")
        return shape

    def params(self) -> int:
        return 2 * self.ch

    def statistics(self) -> int:
        return 2 * self.ch

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return 2 * out.elements


# per-element cost of each activation, counting exp/log/tanh as one op
_ACTIVATION_COST = {
    ActivationKind.relu: 1,
    ActivationKind.leaky_relu: 2,
    ActivationKind.mish: 5,
    ActivationKind.silu: 4,
    ActivationKind.sigmoid: 3,
    ActivationKind.linear: 0,
}


class Activation(LayerSpec, frozen=True, kw_only=True, tag="activation"):
    act: ActivationKind
    slope: float = 0.1

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return _ACTIVATION_COST[self.act] * out.elements


class UpsampleNearest2x(LayerSpec, frozen=True, kw_only=True, tag="upsample_nearest2x"):
    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        (shape,) = shapes
        return shape.with_(h=shape.h * 2, w=shape.w * 2)


class Concat(LayerSpec, frozen=True, kw_only=True, tag="concat"):
    arity: ClassVar[int | None] = None

    def check(self) -> None:
        if len(self.inputs) < 2:
            raise InvalidLayer(self.name, "Concat needs at least two inputs")

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        first = shapes[0]
        for name, shape in zip(self.inputs[1:], shapes[1:]):
            if (shape.n, shape.h, shape.w) != (first.n, first.h, first.w):
                raise ShapeMismatch(self.name, f"input {name!r} is {shape!r}, expected n,h,w of {first!r}")
        return first.with_(c=sum(s.c for s in shapes))


class Add(LayerSpec, frozen=True, kw_only=True, tag="add"):
    arity: ClassVar[int | None] = None

    def check(self) -> None:
        if len(self.inputs) < 2:
            raise InvalidLayer(self.name, "Add needs at least two inputs")

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        first = shapes[0]
        for name, shape in zip(self.inputs[1:], shapes[1:]):
            if shape != first:
                raise ShapeMismatch(self.name, f"input {name!r} is {shape!r}, expected {first!r}")
        return first

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return (len(shapes) - 1) * out.elements


class MaxPool(LayerSpec, frozen=True, kw_only=True, tag="max_pool"):
    kernel: int
    stride: int = 1
    pad: int = 0

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        (shape,) = shapes
        return shape.with_(
            h=_window(self.name, shape.h, self.kernel, self.stride, self.pad),
            w=_window(self.name, shape.w, self.kernel, self.stride, self.pad),
        )

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return self.kernel * self.kernel * out.elements


class AvgPool(LayerSpec, frozen=True, kw_only=True, tag="avg_pool"):
    kernel: int = 2
    stride: int = 2
    pad: int = 0
    global_pool: bool = False
    ceil_mode: bool = False

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        (shape,) = shapes
        if self.global_pool:
            return shape.with_(h=1, w=1)
        if self.ceil_mode:
            h = math.ceil((shape.h + 2 * self.pad - self.kernel) / self.stride) + 1
            w = math.ceil((shape.w + 2 * self.pad - self.kernel) / self.stride) + 1
            if min(h, w) < 1:
                raise ShapeMismatch(self.name, f"window does not fit {shape!r}")
            return shape.with_(h=h, w=w)
        return shape.with_(
            h=_window(self.name, shape.h, self.kernel, self.stride, self.pad),
            w=_window(self.name, shape.w, self.kernel, self.stride, self.pad),
        )

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        if self.global_pool:
            return shapes[0].elements
        return self.kernel * self.kernel * out.elements


class SPP(LayerSpec, frozen=True, kw_only=True, tag="spp"):
    """Concatenates the input with stride-1 max pools of each size, channel axis, input first."""

    pool_sizes: tuple[int, ...] = (5, 9, 13)

    def check(self) -> None:
        super().check()
        if any(k < 1 or k % 2 == 0 for k in self.pool_sizes):
            raise InvalidLayer(self.name, f"pool sizes must be odd and positive, received {self.pool_sizes!r}")

    def out_shape(self, shapes: Sequence[ShapeNCHW]) -> ShapeNCHW:
        (shape,) = shapes
        return shape.with_(c=shape.c * (len(self.pool_sizes) + 1))

    def flops(self, shapes: Sequence[ShapeNCHW], out: ShapeNCHW) -> int:
        return sum(k * k for k in self.pool_sizes) * shapes[0].elements


class DropBlock(LayerSpec, frozen=True, kw_only=True, tag="drop_block"):
    block_size: int = 3
    keep_prob: float = 0.9

    def check(self) -> None:
        super().check()
        if self.block_size < 1 or self.block_size % 2 == 0:
            raise InvalidLayer(self.name, f"block_size must be odd and positive, received {self.block_size}")
        if not 0 < self.keep_prob <= 1:
            raise InvalidLayer(self.name, f"keep_prob must lie in (0, 1], received {self.keep_prob}")


Layer: TypeAlias = (
    Conv2d
    | DeformConv2d
    | CoordConv
    | BatchNorm
    | Activation
    | UpsampleNearest2x
    | Concat
    | Add
    | MaxPool
    | AvgPool
    | SPP
    | DropBlock
)
