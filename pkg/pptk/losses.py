"""
Detection losses with analytic-gradient contracts.

The IoU-aware term is a binary cross-entropy with the soft label ``t`` (the
IoU of a positive's decoded box with its ground truth) on the raw IoU logit
``p``; only positives contribute. Box, objectness and class terms follow the
YOLOv3 lineage: ``1 - IoU`` on positives, and binary cross-entropy for
objectness (ignored anchors excluded) and classes.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Iterable, Sequence

import msgspec
import numpy as np

from ._types import AnchorTable, Float64Array
from .boxes import BBox, boxes_to_array, iou, iou_matrix
from .enums import MatchLabel
from .errors import GeometryMismatch, InvalidSoftLabel, ZeroAreaBox
from .postprocess import STRIDES, YOLOV3_ANCHORS, decode_level, split_head

__all__ = (
    "IoUAwareSample",
    "Assignment",
    "MatchResult",
    "LevelTargets",
    "LossReport",
    "bce_with_logits",
    "iou_aware_loss",
    "iou_aware_loss_grad",
    "match_anchors",
    "encode_boxes",
    "build_targets",
    "detection_losses",
    "gradcheck",
)

log = logging.getLogger(__name__)


class IoUAwareSample(msgspec.Struct, frozen=True):
    t: float
    p: float
    positive: bool = True


class Assignment(msgspec.Struct, frozen=True):
    gt_index: int
    level: int
    grid_y: int
    grid_x: int
    anchor_index: int


class LossReport(msgspec.Struct, frozen=True):
    box_loss: float
    obj_loss: float
    cls_loss: float
    iou_aware_loss: float
    num_positives: int

    @property
    def total(self) -> float:
        return self.box_loss + self.obj_loss + self.cls_loss + self.iou_aware_loss


class MatchResult:
    """
    Anchor assignment for one image.

    ``assignments`` holds one entry per ground truth, in input order.
    ``labels[level]`` is an (A, H, W) array of :class:`MatchLabel` values.
    """

    __slots__ = ("assignments", "labels", "input_size", "strides")

    def __init__(
        self,
        assignments: list[Assignment],
        labels: list[np.ndarray],
        input_size: int,
        strides: Sequence[int],
    ) -> None:
        self.assignments = assignments
        self.labels = labels
        self.input_size = input_size
        self.strides = tuple(strides)

    @property
    def positives(self) -> set[tuple[int, int, int, int]]:
        return {(a.level, a.grid_y, a.grid_x, a.anchor_index) for a in self.assignments}

    def count(self, label: MatchLabel) -> int:
        return int(sum((lv == label.value).sum() for lv in self.labels))

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} gts={len(self.assignments)} positives={self.count(MatchLabel.positive)} "
            f"ignored={self.count(MatchLabel.ignored)} input_size={self.input_size}>"
        )


def _check_soft_label(t: float) -> None:
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise InvalidSoftLabel(t)


def _softplus(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray | float) -> np.ndarray:
    return 0.5 * (1 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def bce_with_logits(t: np.ndarray | float, p: np.ndarray | float) -> np.ndarray:
    """``-t*log(sigmoid(p)) - (1-t)*log(1-sigmoid(p))``, finite for every finite ``p``."""

    t = np.asarray(t, dtype=np.float64)
    return t * _softplus(-np.asarray(p, dtype=np.float64)) + (1 - t) * _softplus(p)


def iou_aware_loss(samples: Iterable[IoUAwareSample]) -> float:
    """Sum of the soft-label cross-entropy over positive samples."""

    total = 0.0
    for sample in samples:
        _check_soft_label(sample.t)
        if sample.positive:
            total += float(bce_with_logits(sample.t, sample.p))
    return total


def iou_aware_loss_grad(t: float, p: float) -> float:
    """``d loss / d p = sigmoid(p) - t``."""

    _check_soft_label(t)
    return float(_sigmoid(p)) - t


def _gt_boxes(gts: Sequence[BBox]) -> Float64Array:
    boxes = boxes_to_array(gts)
    for i, box in enumerate(boxes):
        if box[2] - box[0] <= 0 or box[3] - box[1] <= 0:
            raise ZeroAreaBox(i, gts[i])
    return boxes


def _prior_boxes(level_anchors: Sequence[tuple[float, float]], stride: int, grid: int) -> Float64Array:
    """Anchor priors centered in every cell, (A, H, W, 4)."""

    centers = (np.arange(grid) + 0.5) * stride
    cy, cx = np.meshgrid(centers, centers, indexing="ij")
    sizes = np.asarray(level_anchors, dtype=np.float64)
    half_w = sizes[:, 0, None, None] / 2
    half_h = sizes[:, 1, None, None] / 2
    return np.stack([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=-1)


def match_anchors(
    gts: Sequence[BBox],
    anchors: AnchorTable = YOLOV3_ANCHORS,
    input_size: int = 608,
    ignore_thresh: float = 0.7,
    *,
    strides: Sequence[int] = STRIDES,
    pred_boxes: Sequence[np.ndarray] | None = None,
) -> MatchResult:
    """
    Assigns every ground truth to one anchor cell.

    The anchor (over all levels) with the highest shape IoU against the
    ground truth, both centered at the origin, wins; ties go to the lowest
    (level, anchor). The cell holding the ground-truth center at that level
    becomes positive. Anchors whose box (the prior centered in its cell, or
    ``pred_boxes[level]`` (A, H, W, 4) when given) overlaps any ground truth
    above ``ignore_thresh`` without being positive are ignored.

    Raises
    -----------
    ZeroAreaBox
        A ground truth has no area
    """

    if input_size % 32:
        raise ValueError(f"input_size must be divisible by 32, received {input_size}")
    if len(anchors) != len(strides):
        raise GeometryMismatch(len(anchors), f"{len(anchors)} anchor groups for {len(strides)} strides")

    boxes = _gt_boxes(gts)
    flat = [(level, k, w, h) for level, group in enumerate(anchors) for k, (w, h) in enumerate(group)]
    anchor_wh = np.array([(w, h) for _, _, w, h in flat], dtype=np.float64).reshape(-1, 2)

    labels = [np.zeros((len(group), input_size // s, input_size // s), dtype=np.int8) for group, s in zip(anchors, strides)]

    assignments: list[Assignment] = []
    for index, box in enumerate(boxes):
        gw, gh = box[2] - box[0], box[3] - box[1]
        inter = np.minimum(gw, anchor_wh[:, 0]) * np.minimum(gh, anchor_wh[:, 1])
        shape_iou = inter / (gw * gh + anchor_wh[:, 0] * anchor_wh[:, 1] - inter)
        level, k, _, _ = flat[int(np.argmax(shape_iou))]

        stride = strides[level]
        grid = input_size // stride
        cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
        gx = min(max(int(math.floor(cx / stride)), 0), grid - 1)
        gy = min(max(int(math.floor(cy / stride)), 0), grid - 1)
        assignments.append(Assignment(index, level, gy, gx, k))

    for level, (group, stride) in enumerate(zip(anchors, strides)):
        grid = input_size // stride
        if pred_boxes is not None:
            priors = np.asarray(pred_boxes[level], dtype=np.float64)
            if priors.shape != (len(group), grid, grid, 4):
                raise GeometryMismatch(level, f"pred_boxes shape {priors.shape} for a {grid}x{grid} grid")
        else:
            priors = _prior_boxes(group, stride, grid)
        if len(boxes):
            best = iou_matrix(priors.reshape(-1, 4), boxes).max(axis=1).reshape(labels[level].shape)
            labels[level][best > ignore_thresh] = MatchLabel.ignored.value

    for a in assignments:
        labels[a.level][a.anchor_index, a.grid_y, a.grid_x] = MatchLabel.positive.value

    result = MatchResult(assignments, labels, input_size, strides)
    log.debug("Matched %r", result)
    return result


def encode_boxes(
    boxes: np.ndarray,
    anchor_wh: np.ndarray,
    cells: np.ndarray,
    stride: int,
    eps: float = 1e-12,
) -> Float64Array:
    """
    Inverse of the head decode: corner boxes (K, 4) to raw ``tx, ty, tw, th``.

    ``cells`` holds (grid_x, grid_y) per box; ``anchor_wh`` (K, 2) the prior sizes.
    """

    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    anchor_wh = np.asarray(anchor_wh, dtype=np.float64).reshape(-1, 2)
    cells = np.asarray(cells, dtype=np.float64).reshape(-1, 2)

    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    fx = np.clip(cx / stride - cells[:, 0], eps, 1 - eps)
    fy = np.clip(cy / stride - cells[:, 1], eps, 1 - eps)
    return np.stack(
        [
            np.log(fx / (1 - fx)),
            np.log(fy / (1 - fy)),
            np.log((boxes[:, 2] - boxes[:, 0]) / anchor_wh[:, 0]),
            np.log((boxes[:, 3] - boxes[:, 1]) / anchor_wh[:, 1]),
        ],
        axis=1,
    )


class LevelTargets:
    """
    Dense targets of one level.

    ``boxes`` (A, H, W, 4) are the matched corner boxes, ``classes`` (A, H, W)
    the class ids (-1 where unassigned) and ``weights`` (A, H, W) the box
    weights carried from mixup.
    """

    __slots__ = ("boxes", "classes", "weights", "labels")

    def __init__(self, boxes: np.ndarray, classes: np.ndarray, weights: np.ndarray, labels: np.ndarray) -> None:
        self.boxes = boxes
        self.classes = classes
        self.weights = weights
        self.labels = labels

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} grid={self.labels.shape!r} positives={int((self.labels == 1).sum())}>"


def build_targets(
    matches: MatchResult,
    gts: Sequence[BBox],
    gt_labels: Sequence[int],
    box_weights: Sequence[float] | None = None,
) -> list[LevelTargets]:
    """Scatters matched ground truths into per-level arrays. Later ground truths win a shared cell."""

    if len(gt_labels) != len(gts) or (box_weights is not None and len(box_weights) != len(gts)):
        raise ValueError("gts, gt_labels and box_weights must align")

    boxes = boxes_to_array(gts)
    weights = np.ones(len(gts)) if box_weights is None else np.asarray(box_weights, dtype=np.float64)

    targets = []
    for labels in matches.labels:
        shape = labels.shape
        targets.append(
            LevelTargets(
                np.zeros((*shape, 4)),
                np.full(shape, -1, dtype=np.int64),
                np.zeros(shape),
                labels,
            )
        )
    for a in matches.assignments:
        level = targets[a.level]
        slot = (a.anchor_index, a.grid_y, a.grid_x)
        level.boxes[slot] = boxes[a.gt_index]
        level.classes[slot] = gt_labels[a.gt_index]
        level.weights[slot] = weights[a.gt_index]
    return targets


def detection_losses(
    head_outputs: Sequence[np.ndarray],
    matches: MatchResult,
    targets: Sequence[LevelTargets],
    *,
    num_classes: int = 80,
    anchors: AnchorTable = YOLOV3_ANCHORS,
    iou_aware: bool = True,
) -> LossReport:
    """
    Loss terms of one image, reported separately.

    Each positive's box, objectness, class and IoU-aware terms are weighted
    by its box weight; negatives weigh 1 and ignored anchors contribute
    nothing. The IoU target of the IoU-aware term is treated as a constant.

    Raises
    -----------
    GeometryMismatch
        A head output does not match the grid or anchor count of ``matches``
    """

    if len(head_outputs) != len(matches.labels) or len(targets) != len(matches.labels):
        raise GeometryMismatch(len(head_outputs), f"{len(matches.labels)} levels were matched")

    box_loss = obj_loss = cls_loss = iou_loss = 0.0
    positives = 0
    for level, (head, target, level_anchors, stride) in enumerate(zip(head_outputs, targets, anchors, matches.strides)):
        a, h, w = target.labels.shape
        try:
            raw = split_head(np.asarray(head), a, num_classes, iou_aware)
        except Exception as e:
            raise GeometryMismatch(level, str(e)) from e
        if raw.shape[2:] != (h, w):
            raise GeometryMismatch(level, f"grid {raw.shape[2:]} does not match the matched grid {(h, w)}")

        decoded = decode_level(raw, level_anchors, stride, iou_aware=iou_aware, clip=False)
        labels = target.labels
        pos = labels == MatchLabel.positive.value
        neg = labels == MatchLabel.negative.value
        weight = target.weights[pos]
        positives += int(pos.sum())

        obj_logit = raw[:, 4]
        obj_loss += float((bce_with_logits(1.0, obj_logit[pos]) * weight).sum())
        obj_loss += float(bce_with_logits(0.0, obj_logit[neg]).sum())

        if not pos.any():
            continue

        pred = decoded.boxes[pos]
        gt = target.boxes[pos]
        overlaps = np.diag(iou_matrix(pred, gt)) if len(pred) else np.zeros(0)
        box_loss += float(((1 - overlaps) * weight).sum())

        cls_logits = np.moveaxis(raw[:, 5 : 5 + num_classes], 1, -1)[pos]
        onehot = np.zeros_like(cls_logits)
        onehot[np.arange(len(onehot)), target.classes[pos]] = 1.0
        cls_loss += float((bce_with_logits(onehot, cls_logits).sum(axis=1) * weight).sum())

        if iou_aware:
            iou_loss += float((bce_with_logits(overlaps, raw[:, -1][pos]) * weight).sum())

    return LossReport(box_loss, obj_loss, cls_loss, iou_loss, positives)


def gradcheck(
    func: Callable[[float], float],
    grad: Callable[[float], float],
    points: Iterable[float],
    eps: float = 1e-5,
    floor: float = 1e-3,
) -> float:
    """
    Largest relative error between ``grad`` and a central finite difference of ``func``.

    The error of each point is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """

    worst = 0.0
    for x in points:
        numeric = (func(x + eps) - func(x - eps)) / (2 * eps)
        analytic = grad(x)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))
    return worst
