from __future__ import annotations

import logging
from typing import Sequence

import msgspec

from .archgraph import GraphSpec, compose
from .augment import SIZES_BASE, SIZES_LARGE
from .enums import ActivationKind, Stage
from .errors import UnknownVariant
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
    Layer,
    MaxPool,
    UpsampleNearest2x,
)

__all__ = (
    "RESNET_DEPTHS",
    "NECK_WIDTHS",
    "HEAD_INPUTS",
    "Variant",
    "VARIANTS",
    "build_backbone_resnet_vd",
    "build_backbone_resnet50vd",
    "build_fpn_neck",
    "build_pan_neck",
    "build_head",
    "head_channels",
    "build_variant",
    "get_variant",
)

log = logging.getLogger(__name__)

# blocks per residual stage
RESNET_DEPTHS: dict[int, tuple[int, int, int, int]] = {
    50: (3, 4, 6, 3),
    101: (3, 4, 23, 3),
}

# pyramid widths at strides 32, 16, 8
NECK_WIDTHS = (512, 256, 128)

HEAD_INPUTS = {
    "fpn": ("P3", "P4", "P5"),
    "pan": ("P3", "N4", "N5"),
}


class _Builder:
    def __init__(self, stage: Stage) -> None:
        self.nodes: list[Layer] = []
        self.stage = stage

    def add(self, node: Layer) -> str:
        self.nodes.append(node)
        return node.name

    def conv(
        self,
        name: str,
        src: str,
        in_ch: int,
        out_ch: int,
        kernel: int,
        *,
        stride: int = 1,
        act: ActivationKind | None = ActivationKind.relu,
        deform: bool = False,
        coord: bool = False,
        out: str | None = None,
    ) -> str:
        kind = DeformConv2d if deform else CoordConv if coord else Conv2d
        self.add(
            kind(
                name=f"{name}.conv",
                inputs=(src,),
                stage=self.stage,
                in_ch=in_ch,
                out_ch=out_ch,
                kernel=kernel,
                stride=stride,
                pad=(kernel - 1) // 2,
            )
        )
        bn_name = out if act is None and out is not None else f"{name}.bn"
        last = self.add(BatchNorm(name=bn_name, inputs=(f"{name}.conv",), stage=self.stage, ch=out_ch))
        if act is not None:
            last = self.add(Activation(name=out or f"{name}.act", inputs=(last,), stage=self.stage, act=act))
        return last

    def graph(self, *, inputs: Sequence[str], outputs: Sequence[str], name: str) -> GraphSpec:
        return GraphSpec(nodes=tuple(self.nodes), inputs=tuple(inputs), outputs=tuple(outputs), name=name)


def _bottleneck(
    b: _Builder,
    name: str,
    src: str,
    in_ch: int,
    mid: int,
    stride: int,
    *,
    first: bool,
    deform: bool,
    out: str,
) -> str:
    x = b.conv(f"{name}.branch2a", src, in_ch, mid, 1)
    x = b.conv(f"{name}.branch2b", x, mid, mid, 3, stride=stride, deform=deform)
    x = b.conv(f"{name}.branch2c", x, mid, mid * 4, 1, act=None)

    short = src
    if first:
        if stride > 1:
            # vd downsample: average the 2x2 window, then a stride-1 projection
            short = b.add(
                AvgPool(name=f"{name}.short.pool", inputs=(src,), stage=b.stage, kernel=2, stride=2, ceil_mode=True)
            )
        short = b.conv(f"{name}.short", short, in_ch, mid * 4, 1, act=None)

    b.add(Add(name=f"{name}.add", inputs=(x, short), stage=b.stage))
    return b.add(Activation(name=out, inputs=(f"{name}.add",), stage=b.stage, act=ActivationKind.relu))


def build_backbone_resnet_vd(depth: int = 50, *, dcn_in_stage5: bool = False, with_classifier: bool = False) -> GraphSpec:
    """
    Builds a ResNet-vd backbone.

    Parameters
    -----------
    depth: int
        50 or 101
    dcn_in_stage5: bool
        Replace every 3x3 convolution of the last stage with a deformable one
    with_classifier: bool
        Append global average pooling and a 1000-way classifier, output ``logits``

    Returns
    -----------
    GraphSpec
        A graph with the ``image`` input and ``C3``, ``C4``, ``C5`` outputs
        at strides 8, 16 and 32
    """

    try:
        blocks = RESNET_DEPTHS[depth]
    except KeyError:
        raise UnknownVariant(f"resnet{depth}_vd", [f"resnet{d}_vd" for d in RESNET_DEPTHS]) from None

    b = _Builder(Stage.stem)
    x = b.conv("stem.conv1", "image", 3, 32, 3, stride=2)
    x = b.conv("stem.conv2", x, 32, 32, 3)
    x = b.conv("stem.conv3", x, 32, 64, 3)
    x = b.add(MaxPool(name="stem.pool", inputs=(x,), stage=Stage.stem, kernel=3, stride=2, pad=1))

    in_ch = 64
    for index, (count, stage) in enumerate(zip(blocks, (Stage.res2, Stage.res3, Stage.res4, Stage.res5))):
        b.stage = stage
        mid = 64 * 2**index
        for block in range(count):
            last = block == count - 1
            x = _bottleneck(
                b,
                f"{stage.value}.{block}",
                x,
                in_ch,
                mid,
                stride=2 if block == 0 and index > 0 else 1,
                first=block == 0,
                deform=dcn_in_stage5 and stage is Stage.res5,
                out=f"C{index + 2}" if last else f"{stage.value}.{block}.out",
            )
            in_ch = mid * 4

    outputs = ["C3", "C4", "C5"]
    if with_classifier:
        b.stage = Stage.classifier
        b.add(AvgPool(name="classifier.pool", inputs=("C5",), stage=Stage.classifier, global_pool=True))
        b.add(
            Conv2d(
                name="logits",
                inputs=("classifier.pool",),
                stage=Stage.classifier,
                in_ch=in_ch,
                out_ch=1000,
                kernel=1,
                has_bias=True,
            )
        )
        outputs.append("logits")

    suffix = "_dcn" if dcn_in_stage5 else ""
    return b.graph(inputs=("image",), outputs=outputs, name=f"resnet{depth}_vd{suffix}")


def build_backbone_resnet50vd(dcn_in_stage5: bool = False) -> GraphSpec:
    return build_backbone_resnet_vd(50, dcn_in_stage5=dcn_in_stage5)


def _csp_block(
    b: _Builder,
    name: str,
    src: str,
    in_ch: int,
    ch: int,
    count: int,
    *,
    act: ActivationKind,
    spp: bool,
    coord: bool,
    drop_block: bool,
    out: str,
) -> str:
    left = b.conv(f"{name}.conv1", src, in_ch, ch, 1, act=act, coord=coord)
    right = b.conv(f"{name}.conv2", src, in_ch, ch, 1, act=act, coord=coord)

    inner = min(1, count - 1)
    x = left
    for j in range(count):
        x = b.conv(f"{name}.module.{j}.0", x, ch, ch, 1, act=act)
        if spp and j == inner:
            x = b.add(SPP(name=f"{name}.spp", inputs=(x,), stage=b.stage))
            x = b.conv(f"{name}.spp.conv", x, ch * 4, ch, 1, act=act)
        x = b.conv(f"{name}.module.{j}.1", x, ch, ch, 3, act=act)
        if drop_block and j == inner:
            x = b.add(DropBlock(name=f"{name}.drop_block", inputs=(x,), stage=b.stage))

    x = b.add(Concat(name=f"{name}.merge", inputs=(x, right), stage=b.stage))
    return b.conv(f"{name}.conv3", x, ch * 2, ch, 1, act=act, out=out)


def _fpn(
    b: _Builder,
    c3_ch: int,
    c4_ch: int,
    c5_ch: int,
    *,
    act: ActivationKind,
    widths: Sequence[int],
    coord: bool,
    spp: bool,
    drop_block: bool,
) -> None:
    laterals = (("C5", c5_ch, "P5"), ("C4", c4_ch, "P4"), ("C3", c3_ch, "P3"))
    blocks = (3, 1, 1)

    route: str | None = None
    route_ch = 0
    for level, ((lateral, lateral_ch, out), ch, count) in enumerate(zip(laterals, widths, blocks)):
        src, in_ch = lateral, lateral_ch
        if route is not None:
            up = b.add(UpsampleNearest2x(name=f"fpn.{level}.upsample", inputs=(route,), stage=b.stage))
            src = b.add(Concat(name=f"fpn.{level}.concat", inputs=(up, lateral), stage=b.stage))
            in_ch = route_ch + lateral_ch

        out = _csp_block(
            b,
            f"fpn.{level}",
            src,
            in_ch,
            ch,
            count,
            act=act,
            spp=spp and level == 0,
            coord=coord,
            drop_block=drop_block,
            out=out,
        )
        if level < 2:
            route = b.conv(f"fpn.{level}.transition", out, ch, ch // 2, 1, act=act)
            route_ch = ch // 2


def build_fpn_neck(
    c3_ch: int = 512,
    c4_ch: int = 1024,
    c5_ch: int = 2048,
    *,
    act: ActivationKind | str = ActivationKind.leaky_relu,
    widths: Sequence[int] = NECK_WIDTHS,
    coord: bool = True,
    spp: bool = True,
    drop_block: bool = True,
) -> GraphSpec:
    """
    The top-down pyramid alone.

    Consumes ``C3``, ``C4``, ``C5``; emits ``P3``, ``P4``, ``P5``.
    """

    if min(c3_ch, c4_ch, c5_ch) < 1:
        raise ValueError("channel counts must be positive")
    b = _Builder(Stage.neck)
    _fpn(b, c3_ch, c4_ch, c5_ch, act=ActivationKind(act), widths=widths, coord=coord, spp=spp, drop_block=drop_block)
    return b.graph(inputs=("C3", "C4", "C5"), outputs=HEAD_INPUTS["fpn"], name="fpn")


def build_pan_neck(
    c3_ch: int = 512,
    c4_ch: int = 1024,
    c5_ch: int = 2048,
    *,
    act: ActivationKind | str = ActivationKind.mish,
    widths: Sequence[int] = NECK_WIDTHS,
    coord: bool = True,
    drop_block: bool = True,
) -> GraphSpec:
    """
    The symmetric neck: the top-down pyramid followed by a bottom-up path.

    Each bottom-up level downsamples the finer output with a stride-2 3x3
    convolution, concatenates the same-level pyramid output, fuses back to
    the pyramid width and adds that pyramid output as an identity skip before
    its block. Node names of the bottom-up half start with ``pan.``.

    Consumes ``C3``, ``C4``, ``C5``; emits ``P3``, ``N4``, ``N5``.
    """

    if min(c3_ch, c4_ch, c5_ch) < 1:
        raise ValueError("channel counts must be positive")
    act = ActivationKind(act)
    b = _Builder(Stage.neck)
    _fpn(b, c3_ch, c4_ch, c5_ch, act=act, widths=widths, coord=coord, spp=True, drop_block=drop_block)

    w5, w4, w3 = widths
    x, x_ch = "P3", w3
    for level, (lateral, lateral_ch, out) in enumerate((("P4", w4, "N4"), ("P5", w5, "N5"))):
        name = f"pan.{level}"
        down = b.conv(f"{name}.down", x, x_ch, x_ch, 3, stride=2, act=act)
        cat = b.add(Concat(name=f"{name}.concat", inputs=(down, lateral), stage=b.stage))
        fuse = b.conv(f"{name}.fuse", cat, x_ch + lateral_ch, lateral_ch, 1, act=act)
        skip = b.add(Add(name=f"{name}.skip", inputs=(fuse, lateral), stage=b.stage))
        x = _csp_block(
            b,
            name,
            skip,
            lateral_ch,
            lateral_ch,
            2,
            act=act,
            spp=False,
            coord=False,
            drop_block=drop_block,
            out=out,
        )
        x_ch = lateral_ch

    return b.graph(inputs=("C3", "C4", "C5"), outputs=HEAD_INPUTS["pan"], name=f"pan_{act.value}")


def head_channels(num_classes: int, anchors_per_level: int, iou_aware: bool) -> int:
    return anchors_per_level * (5 + num_classes + (1 if iou_aware else 0))


def build_head(
    num_classes: int = 80,
    anchors_per_level: int = 3,
    iou_aware: bool = True,
    *,
    in_channels: Sequence[int] = NECK_WIDTHS[::-1],
    inputs: Sequence[str] = HEAD_INPUTS["pan"],
    act: ActivationKind | str = ActivationKind.mish,
) -> GraphSpec:
    """
    Per level, a 3x3 convolution doubling the width, then a biased 1x1
    prediction convolution. Levels are ordered finest first; outputs are
    ``head.0`` (stride 8), ``head.1``, ``head.2``.
    """

    if num_classes < 1 or anchors_per_level < 1:
        raise ValueError("num_classes and anchors_per_level must be >= 1")

    channels = head_channels(num_classes, anchors_per_level, iou_aware)
    b = _Builder(Stage.head)
    outputs = []
    for level, (src, ch) in enumerate(zip(inputs, in_channels)):
        x = b.conv(f"head.{level}.tip", src, ch, ch * 2, 3, act=ActivationKind(act))
        outputs.append(
            b.add(
                Conv2d(
                    name=f"head.{level}",
                    inputs=(x,),
                    stage=Stage.head,
                    in_ch=ch * 2,
                    out_ch=channels,
                    kernel=1,
                    has_bias=True,
                )
            )
        )
    return b.graph(inputs=inputs, outputs=outputs, name=f"yolo_head_{channels}")


class Variant(msgspec.Struct, frozen=True, kw_only=True):
    """One row of the refinement ablation."""

    name: str
    description: str
    neck: str
    act: ActivationKind
    input_size: int
    train_sizes: tuple[int, ...]
    iou_aware: bool
    expected_params: float
    expected_gflops: float

    @property
    def max_train_size(self) -> int:
        return self.train_sizes[-1]


VARIANTS: dict[str, Variant] = {
    v.name: v
    for v in (
        Variant(
            name="A",
            description="PP-YOLO baseline (FPN, leaky ReLU)",
            neck="fpn",
            act=ActivationKind.leaky_relu,
            input_size=608,
            train_sizes=SIZES_BASE,
            iou_aware=False,
            expected_params=45e6,
            expected_gflops=45.1,
        ),
        Variant(
            name="B",
            description="A + PAN + Mish",
            neck="pan",
            act=ActivationKind.mish,
            input_size=608,
            train_sizes=SIZES_BASE,
            iou_aware=False,
            expected_params=54e6,
            expected_gflops=52.0,
        ),
        Variant(
            name="C",
            description="B + input size 640",
            neck="pan",
            act=ActivationKind.mish,
            input_size=640,
            train_sizes=SIZES_BASE,
            iou_aware=False,
            expected_params=54e6,
            expected_gflops=57.6,
        ),
        Variant(
            name="D",
            description="C + larger training sizes",
            neck="pan",
            act=ActivationKind.mish,
            input_size=640,
            train_sizes=SIZES_LARGE,
            iou_aware=False,
            expected_params=54e6,
            expected_gflops=57.6,
        ),
        Variant(
            name="E",
            description="D + IoU aware branch",
            neck="pan",
            act=ActivationKind.mish,
            input_size=640,
            train_sizes=SIZES_LARGE,
            iou_aware=True,
            expected_params=54e6,
            expected_gflops=57.6,
        ),
    )
}


def get_variant(name: str) -> Variant:
    try:
        return VARIANTS[name.upper()]
    except KeyError:
        raise UnknownVariant(name, list(VARIANTS)) from None


def build_variant(
    name: str,
    num_classes: int = 80,
    depth: int = 50,
    *,
    widths: Sequence[int] = NECK_WIDTHS,
    act: ActivationKind | str | None = None,
    frozen_stages: int = 0,
) -> GraphSpec:
    """
    Builds the full detector of one ablation row: a ResNet-vd backbone with
    deformable convolutions in its last stage, the row's neck and the YOLO head.
    """

    variant = get_variant(name)
    act = variant.act if act is None else ActivationKind(act)

    backbone = build_backbone_resnet_vd(depth, dcn_in_stage5=True)
    if variant.neck == "fpn":
        neck = build_fpn_neck(512, 1024, 2048, act=act, widths=widths)
    else:
        neck = build_pan_neck(512, 1024, 2048, act=act, widths=widths)

    head = build_head(
        num_classes,
        3,
        variant.iou_aware,
        in_channels=tuple(widths)[::-1],
        inputs=HEAD_INPUTS[variant.neck],
        act=act,
    )
    log.debug("Building variant %s (%s) with depth %d", variant.name, variant.description, depth)
    return compose(backbone, neck, head, name=f"ppyolo_{variant.name}_r{depth}", frozen_stages=frozen_stages)
