from __future__ import annotations

from typing import Sequence

import msgspec
import numpy as np

from ._types import Float64Array

__all__ = ("BBox", "Detection", "GroundTruth", "iou", "iou_matrix", "boxes_to_array")


class BBox(msgspec.Struct, frozen=True, array_like=True):
    """Corner-convention box in pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"box corners are out of order: {self!r}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> BBox:
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def to_xywh(self) -> list[float]:
        return [self.x1, self.y1, self.width, self.height]

    def clip(self, width: float, height: float) -> BBox:
        return BBox(
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
            min(max(self.x2, 0.0), width),
            min(max(self.y2, 0.0), height),
        )

    def __iter__(self):
        return iter((self.x1, self.y1, self.x2, self.y2))

    def __repr__(self) -> str:
        return f"BBox({self.x1:g}, {self.y1:g}, {self.x2:g}, {self.y2:g})"


class Detection(msgspec.Struct, frozen=True):
    bbox: BBox
    class_id: int
    score: float


class GroundTruth(msgspec.Struct, frozen=True, kw_only=True):
    image_id: int
    bbox: BBox
    category_id: int
    area: float = -1.0
    iscrowd: bool = False
    id: int = 0

    def __post_init__(self) -> None:
        if self.area < 0:
            msgspec.structs.force_setattr(self, "area", self.bbox.area)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, 0 when the union is empty."""

    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def boxes_to_array(boxes: Sequence[BBox]) -> Float64Array:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([tuple(b) for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray, *, crowd: np.ndarray | None = None) -> Float64Array:
    """
    Pairwise IoU of corner boxes ``a`` (N, 4) and ``b`` (M, 4).

    Where ``crowd[j]`` is set, column ``j`` uses intersection over the area
    of the ``a`` box instead of the union.
    """

    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)

    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    denom = area_a[:, None] + area_b[None, :] - inter
    if crowd is not None:
        denom = np.where(np.asarray(crowd, dtype=bool)[None, :], area_a[:, None], denom)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, inter / np.where(denom > 0, denom, 1), 0.0)
    return out
