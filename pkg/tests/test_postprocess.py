from __future__ import annotations

from pathlib import Path

import msgspec
import numpy as np
import pytest

from pptk import (
    YOLOV3_ANCHORS,
    BBox,
    Detection,
    TensorShapeError,
    decode_boxes,
    fuse_score,
    iou,
    nms,
    postprocess,
    scale_to_original,
    to_coco_results,
)

from .conftest import TOY_CLASSES, TOY_SIZE


def _golden(fixtures: Path) -> list[dict]:
    return msgspec.json.decode((fixtures / "postprocess_golden.json").read_bytes())


def test_golden_detections(toy_heads: list[np.ndarray], fixtures: Path):
    dets = postprocess(toy_heads, TOY_SIZE, num_classes=TOY_CLASSES, iou_aware=True)
    expected = _golden(fixtures)

    assert len(dets) == len(expected)
    for det, want in zip(dets, expected):
        assert list(det.bbox) == pytest.approx(want["bbox"], abs=1e-4)
        assert det.class_id == want["class_id"]
        assert det.score == pytest.approx(want["score"], abs=1e-6)


def test_scores_are_descending(toy_heads: list[np.ndarray]):
    dets = postprocess(toy_heads, TOY_SIZE, num_classes=TOY_CLASSES)
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)


def test_alpha_zero_ignores_iou_channel(toy_heads: list[np.ndarray]):
    dets = postprocess(toy_heads, TOY_SIZE, num_classes=TOY_CLASSES, alpha=0.0)
    # the class-0 box scores obj * cls = 0.5 without its 0.5 IoU prediction
    assert [round(d.score, 6) for d in dets if d.class_id == 0] == [0.5]


def test_max_dets_and_score_thresh(toy_heads: list[np.ndarray]):
    assert len(postprocess(toy_heads, TOY_SIZE, num_classes=TOY_CLASSES, max_dets=1)) == 1
    assert len(postprocess(toy_heads, TOY_SIZE, num_classes=TOY_CLASSES, score_thresh=0.4)) == 2


def test_rejects_wrong_channel_count(toy_heads: list[np.ndarray]):
    with pytest.raises(TensorShapeError):
        postprocess(toy_heads, TOY_SIZE, num_classes=TOY_CLASSES, iou_aware=False)


def test_rejects_missing_level(toy_heads: list[np.ndarray]):
    with pytest.raises(TensorShapeError):
        postprocess(toy_heads[:2], TOY_SIZE, num_classes=TOY_CLASSES)


def test_rejects_wrong_grid(toy_heads: list[np.ndarray]):
    with pytest.raises(TensorShapeError):
        postprocess(toy_heads, 2 * TOY_SIZE, num_classes=TOY_CLASSES)


def test_decode_order_and_geometry():
    head = np.zeros((1, 3 * 85, 2, 2), dtype=np.float32)
    cands = decode_boxes(head, YOLOV3_ANCHORS[2], 32, 64, num_classes=80, iou_aware=False, clip=False)

    assert len(cands) == 12
    assert [(c.grid_y, c.grid_x, c.anchor) for c in cands[:4]] == [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 1, 0)]
    first = cands[0]
    # zero logits put the center mid-cell and keep the anchor size
    assert first.bbox.center == (16.0, 16.0)
    assert (first.bbox.width, first.bbox.height) == (116.0, 90.0)
    assert first.objectness == 0.5
    assert first.iou_pred is None


def test_decode_clips_to_input():
    head = np.zeros((1, 3 * 85, 2, 2), dtype=np.float32)
    for cand in decode_boxes(head, YOLOV3_ANCHORS[2], 32, 64, num_classes=80, iou_aware=False):
        assert 0 <= cand.bbox.x1 <= cand.bbox.x2 <= 64
        assert 0 <= cand.bbox.y1 <= cand.bbox.y2 <= 64


def test_fuse_score():
    assert fuse_score(0.81, 0.5) == 0.81 * 0.5
    assert fuse_score(0.81, 0.5, 0.25, alpha=0.0) == 0.81 * 0.5
    assert fuse_score(0.81, 0.5, 0.25, alpha=0.5) == pytest.approx(0.9 * 0.5 * 0.5)
    assert fuse_score(0.81, 0.5, 0.25, alpha=1.0) == pytest.approx(0.25 * 0.5)


def test_nms_suppresses_within_class_only():
    box = BBox(0, 0, 10, 10)
    near = BBox(1, 0, 11, 10)
    assert iou(box, near) > 0.45

    dets = [Detection(near, 0, 0.8), Detection(box, 0, 0.9), Detection(box, 1, 0.7)]
    assert nms(dets) == [dets[1], dets[2]]


def test_nms_keeps_boxes_at_threshold():
    # IoU exactly 0.5 is not above the threshold
    a, b = BBox(0, 0, 10, 10), BBox(0, 0, 10, 5)
    assert iou(a, b) == 0.5
    assert len(nms([Detection(a, 0, 0.9), Detection(b, 0, 0.8)], iou_thresh=0.5)) == 2


def test_nms_ties_prefer_lower_class_then_input_order():
    a, b = BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)
    dets = [Detection(a, 2, 0.5), Detection(b, 1, 0.5), Detection(b, 2, 0.5)]
    assert nms(dets) == [dets[1], dets[0], dets[2]]


def test_nms_matches_bruteforce_oracle(rng: np.random.Generator):
    xy = rng.uniform(0, 50, (40, 2))
    wh = rng.uniform(5, 30, (40, 2))
    dets = [
        Detection(BBox(x, y, x + w, y + h), int(c), float(s))
        for (x, y), (w, h), c, s in zip(xy, wh, rng.integers(0, 3, 40), rng.uniform(0, 1, 40))
    ]

    kept = nms(dets, iou_thresh=0.45, score_thresh=0.0, max_dets=100)
    kept_ids = {id(d) for d in kept}
    for det in dets:
        if id(det) in kept_ids:
            continue
        # every suppressed box overlaps a kept, higher-scoring box of its class
        assert any(k.class_id == det.class_id and k.score >= det.score and iou(k.bbox, det.bbox) > 0.45 for k in kept)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            assert a.class_id != b.class_id or iou(a.bbox, b.bbox) <= 0.45


def test_scale_to_original():
    det = Detection(BBox(8, 16, 32, 64), 0, 0.9)
    (scaled,) = scale_to_original([det], 64, (128, 32))
    assert tuple(scaled.bbox) == (4.0, 32.0, 16.0, 128.0)
    assert scaled.score == det.score


def test_coco_records():
    dets = [Detection(BBox(10, 20, 40, 60), 1, 0.75)]
    (record,) = to_coco_results(dets, image_id=7, category_ids=[1, 2, 3])
    assert (record.image_id, record.category_id, record.bbox, record.score) == (7, 2, [10.0, 20.0, 30.0, 40.0], 0.75)
