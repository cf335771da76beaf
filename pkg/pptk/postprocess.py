from __future__ import annotations

import logging
from typing import Any, Sequence

import msgspec
import numpy as np

from ._types import AnchorSizes, AnchorTable, Float64Array
from .boxes import BBox, Detection, iou
from .errors import TensorShapeError

__all__ = (
    "YOLOV3_ANCHORS",
    "STRIDES",
    "Candidate",
    "DecodedLevel",
    "CocoResult",
    "split_head",
    "decode_level",
    "decode_boxes",
    "fuse_score",
    "nms",
    "postprocess",
    "scale_to_original",
    "to_coco_results",
)

log = logging.getLogger(__name__)

# (width, height) per anchor, three per level, finest stride first
YOLOV3_ANCHORS: tuple[tuple[tuple[int, int], ...], ...] = (
    ((10, 13), (16, 30), (33, 23)),
    ((30, 61), (62, 45), (59, 119)),
    ((116, 90), (156, 198), (373, 326)),
)
STRIDES = (8, 16, 32)


class Candidate(msgspec.Struct, frozen=True, kw_only=True):
    bbox: BBox
    objectness: float
    class_probs: list[float]
    iou_pred: float | None
    anchor: int
    grid_y: int
    grid_x: int


class CocoResult(msgspec.Struct, frozen=True):
    image_id: int
    category_id: int
    bbox: list[float]
    score: float


class DecodedLevel:
    """
    Arrays of one decoded level.

    ``boxes`` is (A, H, W, 4) in corner pixels; ``obj`` (A, H, W), ``cls``
    (A, H, W, C) and ``iou`` (A, H, W) hold probabilities. ``iou`` is
    ``None`` for heads without the IoU-aware channel.
    """

    __slots__ = ("boxes", "obj", "cls", "iou", "stride")

    def __init__(
        self,
        boxes: Float64Array,
        obj: Float64Array,
        cls: Float64Array,
        iou: Float64Array | None,
        stride: int,
    ) -> None:
        self.boxes = boxes
        self.obj = obj
        self.cls = cls
        self.iou = iou
        self.stride = stride

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} grid={self.obj.shape!r} stride={self.stride} iou_aware={self.iou is not None}>"


def _sigmoid(x: np.ndarray) -> Float64Array:
    return 0.5 * (1 + np.tanh(0.5 * x))


def split_head(head: np.ndarray, anchors_per_level: int, num_classes: int, iou_aware: bool) -> Float64Array:
    """
    Reshapes a level output (1, A*D, H, W) or (A*D, H, W) to (A, D, H, W).

    Per anchor, the ``D`` channels are laid out ``tx, ty, tw, th, obj, cls..., [iou]``.
    """

    if head.ndim == 4:
        if head.shape[0] != 1:
            raise TensorShapeError("split_head", "a batch of one", head.shape)
        head = head[0]
    if head.ndim != 3:
        raise TensorShapeError("split_head", "(1, C, H, W) or (C, H, W)", head.shape)

    depth = 5 + num_classes + (1 if iou_aware else 0)
    if head.shape[0] != anchors_per_level * depth:
        expected = f"{anchors_per_level} x {depth} = {anchors_per_level * depth} channels"
        raise TensorShapeError("split_head", expected, head.shape[0])
    return head.astype(np.float64).reshape(anchors_per_level, depth, *head.shape[1:])


def decode_level(
    raw: np.ndarray,
    anchors: AnchorSizes,
    stride: int,
    *,
    iou_aware: bool,
    input_size: int | None = None,
    clip: bool = True,
) -> DecodedLevel:
    """Decodes a split level ``raw`` (A, D, H, W); see :func:`split_head`."""

    a, depth, h, w = raw.shape
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sizes = np.asarray(anchors, dtype=np.float64).reshape(a, 2)

    cx = (_sigmoid(raw[:, 0]) + gx) * stride
    cy = (_sigmoid(raw[:, 1]) + gy) * stride
    bw = sizes[:, 0, None, None] * np.exp(raw[:, 2])
    bh = sizes[:, 1, None, None] * np.exp(raw[:, 3])
    boxes = np.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], axis=-1)
    if clip:
        if input_size is None:
            raise ValueError("clipping needs input_size")
        boxes = np.clip(boxes, 0, input_size)

    cls_end = depth - 1 if iou_aware else depth
    return DecodedLevel(
        boxes=boxes,
        obj=_sigmoid(raw[:, 4]),
        cls=np.moveaxis(_sigmoid(raw[:, 5:cls_end]), 1, -1),
        iou=_sigmoid(raw[:, -1]) if iou_aware else None,
        stride=stride,
    )


def decode_boxes(
    head: np.ndarray,
    anchors: AnchorSizes,
    stride: int,
    input_size: int,
    *,
    num_classes: int = 80,
    iou_aware: bool = True,
    clip: bool = True,
) -> list[Candidate]:
    """
    One candidate per (cell, anchor), ordered by row, column, then anchor.

    Centers decode as ``(sigmoid(t) + cell) * stride`` and sizes as
    ``anchor * exp(t)``; objectness, class and IoU channels pass through a
    sigmoid. Boxes are clipped to ``[0, input_size]`` unless ``clip`` is off.
    """

    raw = split_head(head, len(anchors), num_classes, iou_aware)
    level = decode_level(raw, anchors, stride, iou_aware=iou_aware, input_size=input_size, clip=clip)

    a, h, w = level.obj.shape
    out: list[Candidate] = []
    for y in range(h):
        for x in range(w):
            for k in range(a):
                out.append(
                    Candidate(
                        bbox=BBox(*level.boxes[k, y, x].tolist()),
                        objectness=float(level.obj[k, y, x]),
                        class_probs=level.cls[k, y, x].tolist(),
                        iou_pred=None if level.iou is None else float(level.iou[k, y, x]),
                        anchor=k,
                        grid_y=y,
                        grid_x=x,
                    )
                )
    return out


def fuse_score(objectness: Any, class_prob: Any, iou_pred: Any = None, alpha: float = 0.5) -> Any:
    """
    ``objectness^(1 - alpha) * iou_pred^alpha * class_prob``.

    Without an IoU prediction, or at ``alpha=0``, this is exactly ``objectness * class_prob``.
    """

    if iou_pred is None or alpha == 0:
        return objectness * class_prob
    return np.power(objectness, 1 - alpha) * np.power(iou_pred, alpha) * class_prob


def nms(
    dets: Sequence[Detection],
    iou_thresh: float = 0.45,
    score_thresh: float = 0.01,
    max_dets: int = 100,
) -> list[Detection]:
    """
    Per-class greedy non-maximum suppression.

    Detections below ``score_thresh`` are dropped; the rest are visited by
    descending score (ties: lower class id first, then input order) and kept
    when their IoU with every kept box of the same class is at most
    ``iou_thresh``. The result keeps the visiting order and is cut to ``max_dets``.
    """

    order = sorted(
        (i for i, det in enumerate(dets) if det.score >= score_thresh),
        key=lambda i: (-dets[i].score, dets[i].class_id, i),
    )
    kept: list[Detection] = []
    by_class: dict[int, list[BBox]] = {}
    for i in order:
        det = dets[i]
        same = by_class.setdefault(det.class_id, [])
        if all(iou(det.bbox, other) <= iou_thresh for other in same):
            same.append(det.bbox)
            kept.append(det)
            if len(kept) == max_dets:
                break
    return kept


def postprocess(
    head_outputs: Sequence[np.ndarray],
    input_size: int,
    *,
    anchors: AnchorTable = YOLOV3_ANCHORS,
    strides: Sequence[int] = STRIDES,
    num_classes: int = 80,
    iou_aware: bool = True,
    alpha: float = 0.5,
    score_thresh: float = 0.01,
    iou_thresh: float = 0.45,
    max_dets: int = 100,
) -> list[Detection]:
    """
    Decodes every level, fuses scores per class, drops degenerate boxes and runs :func:`nms`.

    Levels are ordered finest first, matching ``anchors`` and ``strides``.
    """

    if not len(head_outputs) == len(anchors) == len(strides):
        raise TensorShapeError("postprocess", f"{len(anchors)} levels", len(head_outputs))

    dets: list[Detection] = []
    for head, level_anchors, stride in zip(head_outputs, anchors, strides):
        raw = split_head(np.asarray(head), len(level_anchors), num_classes, iou_aware)
        if raw.shape[2] * stride != input_size or raw.shape[3] * stride != input_size:
            raise TensorShapeError("postprocess", f"a {input_size // stride} grid at stride {stride}", raw.shape[2:])
        level = decode_level(raw, level_anchors, stride, iou_aware=iou_aware, input_size=input_size)

        scores = fuse_score(level.obj[..., None], level.cls, None if level.iou is None else level.iou[..., None], alpha)
        boxes = level.boxes
        valid = (boxes[..., 2] > boxes[..., 0]) & (boxes[..., 3] > boxes[..., 1])
        for k, y, x, c in zip(*np.nonzero((scores >= score_thresh) & valid[..., None])):
            dets.append(Detection(BBox(*boxes[k, y, x].tolist()), int(c), float(scores[k, y, x, c])))

    kept = nms(dets, iou_thresh=iou_thresh, score_thresh=score_thresh, max_dets=max_dets)
    log.debug("postprocess: %d candidates above threshold, %d kept", len(dets), len(kept))
    return kept


def scale_to_original(dets: Sequence[Detection], input_size: int, original_hw: tuple[int, int]) -> list[Detection]:
    """Maps boxes from the square network input back to an ``(height, width)`` image."""

    sy = original_hw[0] / input_size
    sx = original_hw[1] / input_size
    return [
        msgspec.structs.replace(det, bbox=BBox(det.bbox.x1 * sx, det.bbox.y1 * sy, det.bbox.x2 * sx, det.bbox.y2 * sy))
        for det in dets
    ]


def to_coco_results(dets: Sequence[Detection], image_id: int, category_ids: Sequence[int] | None = None) -> list[CocoResult]:
    """COCO result records; ``category_ids[class_id]`` maps contiguous class ids to dataset ids."""

    return [
        CocoResult(
            image_id=image_id,
            category_id=det.class_id if category_ids is None else category_ids[det.class_id],
            bbox=det.bbox.to_xywh(),
            score=det.score,
        )
        for det in dets
    ]
