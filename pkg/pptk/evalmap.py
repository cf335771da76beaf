"""
COCO-style box mAP.

Matching follows the COCO protocol: per image and category, detections are
visited by descending score and each takes the unmatched ground truth with
the highest IoU at or above the threshold, preferring ground truths that
are not ignored. Crowd ground truths may absorb any number of detections.
Detections matched to ignored ground truths, and unmatched detections
outside the evaluated area range, are left out of the precision-recall curve.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import msgspec
import numpy as np

from .boxes import BBox, GroundTruth, iou_matrix
from .enums import MatchLabel
from .errors import AnnotationFormatError
from .postprocess import CocoResult
from .utils import thread_count

__all__ = (
    "IOU_THRESHOLDS",
    "RECALL_POINTS",
    "AREA_RANGES",
    "EvalDetection",
    "MetricsReport",
    "CocoImage",
    "CocoAnnotation",
    "CocoCategory",
    "CocoDataset",
    "match_for_eval",
    "average_precision",
    "evaluate",
    "load_coco_annotations",
    "load_coco_results",
)

log = logging.getLogger(__name__)

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

# closed [low, high] ranges of box area: small < 32², medium 32² to 96², large > 96²
AREA_RANGES: dict[str, tuple[float, float]] = {
    "all": (0.0, math.inf),
    "small": (0.0, math.nextafter(32.0**2, 0.0)),
    "medium": (32.0**2, 96.0**2),
    "large": (math.nextafter(96.0**2, math.inf), math.inf),
}


class EvalDetection(msgspec.Struct, frozen=True, kw_only=True):
    image_id: int
    category_id: int
    bbox: BBox
    score: float

    @classmethod
    def from_result(cls, result: CocoResult) -> EvalDetection:
        return cls(
            image_id=result.image_id,
            category_id=result.category_id,
            bbox=BBox.from_xywh(*result.bbox),
            score=result.score,
        )


class MetricsReport(msgspec.Struct, frozen=True, kw_only=True):
    """Metrics are ``None`` when no category has a ground truth in the evaluated range."""

    AP: float | None
    AP50: float | None
    AP75: float | None
    APS: float | None
    APM: float | None
    APL: float | None
    per_category: dict[str, float | None] = {}


class CocoImage(msgspec.Struct, frozen=True):
    id: int
    width: int = 0
    height: int = 0
    file_name: str = ""


class CocoAnnotation(msgspec.Struct, frozen=True):
    image_id: int
    category_id: int
    bbox: list[float]
    id: int = 0
    area: float | None = None
    iscrowd: int = 0


class CocoCategory(msgspec.Struct, frozen=True):
    id: int
    name: str = ""


class CocoDataset(msgspec.Struct, frozen=True):
    images: list[CocoImage] = []
    annotations: list[CocoAnnotation] = []
    categories: list[CocoCategory] = []

    def ground_truths(self) -> list[GroundTruth]:
        """Areas are measured from the boxes; segmentation areas are not used."""

        return [
            GroundTruth(
                image_id=ann.image_id,
                bbox=BBox.from_xywh(*ann.bbox),
                category_id=ann.category_id,
                iscrowd=bool(ann.iscrowd),
                id=ann.id,
            )
            for ann in self.annotations
        ]


def _in_range(area: float, area_range: tuple[float, float]) -> bool:
    return area_range[0] <= area <= area_range[1]


def match_for_eval(
    dets: Sequence[EvalDetection],
    gts: Sequence[GroundTruth],
    iou_thresh: float,
    area_range: tuple[float, float] = AREA_RANGES["all"],
) -> list[MatchLabel]:
    """
    Greedy COCO matching of ``dets`` (sorted by descending score) on one image.

    Returns one label per detection: ``positive`` for a true positive,
    ``negative`` for a false positive and ``ignored`` for detections that
    do not enter the precision-recall curve.
    """

    if not dets:
        return []

    ignored_gt = [g.iscrowd or not _in_range(g.area, area_range) for g in gts]
    order = sorted(range(len(gts)), key=lambda g: ignored_gt[g])
    gts = [gts[g] for g in order]
    ignored_gt = [ignored_gt[g] for g in order]

    ious = iou_matrix(
        np.array([tuple(d.bbox) for d in dets], dtype=np.float64),
        np.array([tuple(g.bbox) for g in gts], dtype=np.float64).reshape(-1, 4),
        crowd=np.array([g.iscrowd for g in gts], dtype=bool),
    )

    taken = [False] * len(gts)
    labels: list[MatchLabel] = []
    for d, det in enumerate(dets):
        best = min(iou_thresh, 1 - 1e-10)
        match = -1
        for g, gt in enumerate(gts):
            if gt.category_id != det.category_id:
                continue
            if taken[g] and not gt.iscrowd:
                continue
            # ground truths are sorted so ignored ones come last
            if match > -1 and not ignored_gt[match] and ignored_gt[g]:
                break
            if ious[d, g] < best:
                continue
            best = ious[d, g]
            match = g

        if match == -1:
            if _in_range(det.bbox.area, area_range):
                labels.append(MatchLabel.negative)
            else:
                labels.append(MatchLabel.ignored)
            continue
        taken[match] = True
        labels.append(MatchLabel.ignored if ignored_gt[match] else MatchLabel.positive)
    return labels


def average_precision(flags: Sequence[MatchLabel | bool | int], num_gt: int) -> float | None:
    """
    101-point interpolated AP of score-ordered detection flags.

    Ignored flags are dropped. Precision is replaced by its running maximum
    from the right and sampled at recall 0, 0.01, ..., 1. Returns ``None``
    when there is no ground truth.
    """

    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if num_gt == 0:
        return None

    tp = np.array([_as_tp(f) for f in flags if not _is_ignored(f)], dtype=np.float64)
    if not len(tp):
        return 0.0

    tp_sum = np.cumsum(tp)
    fp_sum = np.cumsum(1 - tp)
    recall = tp_sum / num_gt
    precision = tp_sum / (tp_sum + fp_sum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    index = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(index < len(envelope), envelope[np.minimum(index, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def _is_ignored(flag: MatchLabel | bool | int) -> bool:
    return flag is MatchLabel.ignored or (not isinstance(flag, (MatchLabel, bool)) and flag == MatchLabel.ignored.value)


def _as_tp(flag: MatchLabel | bool | int) -> float:
    if isinstance(flag, MatchLabel):
        return 1.0 if flag is MatchLabel.positive else 0.0
    return 1.0 if flag else 0.0


class _Cell:
    """Per (image, category) matching outcome for every threshold and area range."""

    __slots__ = ("scores", "labels", "num_gt")

    def __init__(self) -> None:
        self.scores: list[float] = []
        self.labels: dict[tuple[float, str], list[MatchLabel]] = {}
        self.num_gt: dict[str, int] = {}


def _evaluate_cell(
    dets: list[EvalDetection],
    gts: list[GroundTruth],
    thresholds: Sequence[float],
    max_dets: int,
) -> _Cell:
    dets = sorted(dets, key=lambda d: (-d.score, tuple(d.bbox)))[:max_dets]
    cell = _Cell()
    cell.scores = [d.score for d in dets]
    for area, area_range in AREA_RANGES.items():
        cell.num_gt[area] = sum(1 for g in gts if not g.iscrowd and _in_range(g.area, area_range))
        for t in thresholds:
            cell.labels[(t, area)] = match_for_eval(dets, gts, t, area_range)
    return cell


def evaluate(
    dets: Iterable[EvalDetection],
    gts: Iterable[GroundTruth],
    *,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
    max_dets: int = 100,
    category_names: dict[int, str] | None = None,
    threads: int | None = None,
) -> MetricsReport:
    """
    COCO box metrics.

    Each metric averages per-category AP over the categories with at least
    one ground truth in range; ``AP``, ``APS``, ``APM`` and ``APL`` also
    average over ``thresholds``. At most ``max_dets`` detections per image
    and category are kept. Per-image matching runs on ``threads`` workers
    (default: ``PPTK_THREADS``); accumulation order does not depend on it.
    """

    det_groups: dict[tuple[int, int], list[EvalDetection]] = {}
    gt_groups: dict[tuple[int, int], list[GroundTruth]] = {}
    for det in dets:
        det_groups.setdefault((det.category_id, det.image_id), []).append(det)
    for gt in gts:
        gt_groups.setdefault((gt.category_id, gt.image_id), []).append(gt)

    keys = sorted(set(det_groups) | set(gt_groups))
    workers = threads or thread_count()
    log.debug("Evaluating %d (category, image) cells on %d thread(s)", len(keys), workers)

    def run(key: tuple[int, int]) -> _Cell:
        return _evaluate_cell(det_groups.get(key, []), gt_groups.get(key, []), thresholds, max_dets)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = dict(zip(keys, pool.map(run, keys)))
    else:
        cells = {key: run(key) for key in keys}

    categories = sorted({cat for cat, _ in keys})
    ap: dict[tuple[int, float, str], float | None] = {}
    for cat in categories:
        cat_keys = [key for key in keys if key[0] == cat]  # image order
        for area in AREA_RANGES:
            num_gt = sum(cells[key].num_gt[area] for key in cat_keys)
            scores = np.array([s for key in cat_keys for s in cells[key].scores], dtype=np.float64)
            order = np.argsort(-scores, kind="mergesort")
            for t in thresholds:
                flags = [label for key in cat_keys for label in cells[key].labels[(t, area)]]
                ap[(cat, t, area)] = average_precision([flags[i] for i in order], num_gt)

    def mean(values: Iterable[float | None]) -> float | None:
        defined = [v for v in values if v is not None]
        return float(np.mean(defined)) if defined else None

    def metric(area: str, ts: Sequence[float]) -> float | None:
        per_threshold = [mean(ap[(cat, t, area)] for cat in categories) for t in ts]
        return mean(per_threshold)

    names = category_names or {}
    report = MetricsReport(
        AP=metric("all", thresholds),
        AP50=metric("all", [t for t in thresholds if t == 0.5]),
        AP75=metric("all", [t for t in thresholds if t == 0.75]),
        APS=metric("small", thresholds),
        APM=metric("medium", thresholds),
        APL=metric("large", thresholds),
        per_category={names.get(cat, str(cat)): mean(ap[(cat, t, "all")] for t in thresholds) for cat in categories},
    )
    log.info("Evaluated %d categories: AP=%s", len(categories), report.AP)
    return report


_BYTE_OFFSET = re.compile(r"\(byte (?P<offset>\d+)\)")


def _decode(path: str | Path, data: bytes, type: type) -> object:
    try:
        return msgspec.json.decode(data, type=type)
    except (msgspec.DecodeError, msgspec.ValidationError) as e:
        match = _BYTE_OFFSET.search(str(e))
        offset = int(match["offset"]) if match else None
        raise AnnotationFormatError(str(path), offset, str(e)) from e


def load_coco_annotations(path: str | Path) -> CocoDataset:
    """Reads the ``images``, ``annotations`` and ``categories`` subset of a COCO annotation file."""

    dataset = _decode(path, Path(path).read_bytes(), CocoDataset)
    assert isinstance(dataset, CocoDataset)
    for i, ann in enumerate(dataset.annotations):
        if len(ann.bbox) != 4 or ann.bbox[2] < 0 or ann.bbox[3] < 0:
            raise AnnotationFormatError(str(path), None, f"annotation #{i} has an invalid bbox {ann.bbox!r}")
    return dataset


def load_coco_results(path: str | Path) -> list[EvalDetection]:
    results = _decode(path, Path(path).read_bytes(), list[CocoResult])
    assert isinstance(results, list)
    for i, result in enumerate(results):
        if len(result.bbox) != 4 or result.bbox[2] < 0 or result.bbox[3] < 0:
            raise AnnotationFormatError(str(path), None, f"result #{i} has an invalid bbox {result.bbox!r}")
    return [EvalDetection.from_result(r) for r in results]
