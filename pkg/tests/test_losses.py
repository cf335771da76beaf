from __future__ import annotations

import math

import numpy as np
import pytest

from pptk import (
    YOLOV3_ANCHORS,
    BBox,
    GeometryMismatch,
    InvalidSoftLabel,
    IoUAwareSample,
    MatchLabel,
    ZeroAreaBox,
    bce_with_logits,
    build_targets,
    decode_level,
    detection_losses,
    encode_boxes,
    gradcheck,
    iou,
    iou_aware_loss,
    iou_aware_loss_grad,
    match_anchors,
    run_checks,
    split_head,
)

SIZE = 64
CLASSES = 2
DEPTH = 5 + CLASSES + 1


def test_loss_at_zero_logit_and_half_label():
    assert iou_aware_loss([IoUAwareSample(0.5, 0.0)]) == pytest.approx(math.log(2), abs=1e-12)


def test_loss_saturates_at_confident_match():
    assert iou_aware_loss([IoUAwareSample(1.0, 40.0)]) < 1e-8


def test_negatives_do_not_contribute():
    assert iou_aware_loss([IoUAwareSample(0.3, 5.0, positive=False)]) == 0.0


@pytest.mark.parametrize("t", [-0.1, 1.5, float("nan")])
def test_soft_label_range(t: float):
    with pytest.raises(InvalidSoftLabel):
        iou_aware_loss([IoUAwareSample(t, 0.0)])
    with pytest.raises(InvalidSoftLabel):
        iou_aware_loss_grad(t, 0.0)


def test_bce_is_finite_at_extreme_logits():
    assert np.isfinite(bce_with_logits(1.0, -1000.0))
    assert bce_with_logits(1.0, -1000.0) == pytest.approx(1000.0)
    assert bce_with_logits(0.0, -1000.0) == 0.0


def test_analytic_gradient(rng: np.random.Generator):
    for t, p in zip(rng.uniform(0, 1, 100), rng.uniform(-8, 8, 100)):
        t, p = float(t), float(p)
        assert iou_aware_loss_grad(t, p) == pytest.approx(1 / (1 + math.exp(-p)) - t, abs=1e-12)
        assert gradcheck(lambda x: float(bce_with_logits(t, x)), lambda x: iou_aware_loss_grad(t, x), [p]) < 1e-4


def test_wrong_sign_gradient_fails_the_check():
    error = gradcheck(lambda x: float(bce_with_logits(0.2, x)), lambda x: -iou_aware_loss_grad(0.2, x), [1.0])
    assert error > 1e-4


def test_run_checks():
    report = run_checks(0, 20)
    assert report.passed
    assert {c.name for c in report.checks} >= {"iou_aware_loss.grad", "mish.grad", "silu.grad"}

    broken = run_checks(0, 20, inject_wrong_sign=True)
    assert not broken.passed
    assert [c.name for c in broken.checks if not c.passed] == ["iou_aware_loss.grad"]


def test_match_picks_best_shape_anchor():
    # 50 x 100 overlaps the (59, 119) anchor most
    result = match_anchors([BBox(100, 100, 150, 200)], input_size=608)
    (a,) = result.assignments
    assert (a.level, a.anchor_index) == (1, 2)
    assert (a.grid_y, a.grid_x) == (150 // 16, 125 // 16)
    assert result.labels[1][2, a.grid_y, a.grid_x] == MatchLabel.positive.value
    assert result.count(MatchLabel.positive) == 1


def test_match_marks_overlapping_priors_ignored():
    result = match_anchors([BBox(100, 100, 150, 200)], input_size=608, ignore_thresh=0.3)
    assert result.count(MatchLabel.ignored) > 0
    assert result.count(MatchLabel.positive) == 1


def test_match_rejects_zero_area():
    with pytest.raises(ZeroAreaBox):
        match_anchors([BBox(10, 10, 10, 20)], input_size=64)


def test_match_rejects_indivisible_size():
    with pytest.raises(ValueError):
        match_anchors([BBox(10, 10, 20, 20)], input_size=100)


def test_encode_inverts_decode():
    box = np.array([[20.0, 22.0, 40.0, 46.0]])
    raw_box = encode_boxes(box, np.array([[16.0, 30.0]]), np.array([[3, 4]]), 8)

    raw = np.zeros((3, DEPTH, 8, 8))
    raw[1, :4, 4, 3] = raw_box[0]
    decoded = decode_level(raw, YOLOV3_ANCHORS[0], 8, iou_aware=True, clip=False)
    assert np.allclose(decoded.boxes[1, 4, 3], box[0])


def _perfect_heads(gt: BBox, class_id: int) -> list[np.ndarray]:
    """Heads whose only confident slot predicts ``gt`` exactly at its matched anchor."""

    result = match_anchors([gt], input_size=SIZE)
    (a,) = result.assignments
    heads = []
    for level, stride in enumerate((8, 16, 32)):
        grid = SIZE // stride
        raw = np.zeros((3, DEPTH, grid, grid))
        raw[:, 4] = -30.0
        raw[:, 5 : 5 + CLASSES] = -30.0
        heads.append(raw)

    raw_box = encode_boxes(
        np.array([tuple(gt)]),
        np.array([YOLOV3_ANCHORS[a.level][a.anchor_index]]),
        np.array([[a.grid_x, a.grid_y]]),
        (8, 16, 32)[a.level],
    )
    slot = heads[a.level][a.anchor_index, :, a.grid_y, a.grid_x]
    slot[:4] = raw_box[0]
    slot[4] = 30.0
    slot[5 + class_id] = 30.0
    slot[-1] = 30.0
    return [h.reshape(1, 3 * DEPTH, *h.shape[2:]).astype(np.float32) for h in heads]


def test_perfect_prediction_has_near_zero_loss():
    gt = BBox(20, 22, 40, 46)
    heads = _perfect_heads(gt, 1)
    matches = match_anchors([gt], input_size=SIZE)
    targets = build_targets(matches, [gt], [1])

    report = detection_losses(heads, matches, targets, num_classes=CLASSES, iou_aware=True)
    assert report.num_positives == 1
    assert report.box_loss < 1e-4
    assert report.total < 1e-4


def test_losses_grow_with_wrong_class():
    gt = BBox(20, 22, 40, 46)
    heads = _perfect_heads(gt, 0)
    matches = match_anchors([gt], input_size=SIZE)
    report = detection_losses(heads, matches, build_targets(matches, [gt], [1]), num_classes=CLASSES)
    assert report.cls_loss > 50


def test_mixup_weights_scale_positive_terms():
    gt = BBox(20, 22, 40, 46)
    heads = _perfect_heads(gt, 0)
    matches = match_anchors([gt], input_size=SIZE)

    full = detection_losses(heads, matches, build_targets(matches, [gt], [1]), num_classes=CLASSES)
    half = detection_losses(heads, matches, build_targets(matches, [gt], [1], [0.5]), num_classes=CLASSES)
    assert half.cls_loss == pytest.approx(full.cls_loss / 2)


def test_losses_reject_wrong_level_count():
    gt = BBox(20, 22, 40, 46)
    heads = _perfect_heads(gt, 1)
    matches = match_anchors([gt], input_size=SIZE)
    with pytest.raises(GeometryMismatch):
        detection_losses(heads[:2], matches, build_targets(matches, [gt], [1]), num_classes=CLASSES)


def test_split_head_layout():
    head = np.arange(3 * DEPTH * 4, dtype=np.float32).reshape(1, 3 * DEPTH, 2, 2)
    raw = split_head(head, 3, CLASSES, True)
    assert raw.shape == (3, DEPTH, 2, 2)
    assert raw[1, 0, 0, 0] == head[0, DEPTH, 0, 0]


MULTI_GTS = [
    BBox(10, 12, 30, 40),
    BBox(100, 50, 160, 170),
    BBox(200, 180, 310, 300),
    BBox(5, 250, 45, 270),
    BBox(120, 140, 270, 310),
]


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _bce(t: float, p: float) -> float:
    return t * _softplus(-p) + (1 - t) * _softplus(p)


def _sigmoid(x: float) -> float:
    return 1 / (1 + math.exp(-x))


def _brute_force_match(gts: list[BBox], input_size: int, ignore_thresh: float):
    strides = (8, 16, 32)
    assigned = []
    for gt in gts:
        best, winner = -1.0, None
        for level, group in enumerate(YOLOV3_ANCHORS):
            for k, (aw, ah) in enumerate(group):
                inter = min(gt.width, aw) * min(gt.height, ah)
                shape_iou = inter / (gt.area + aw * ah - inter)
                if shape_iou > best:
                    best, winner = shape_iou, (level, k)
        level, k = winner
        stride, grid = strides[level], input_size // strides[level]
        cx, cy = gt.center
        gx = min(max(int(cx // stride), 0), grid - 1)
        gy = min(max(int(cy // stride), 0), grid - 1)
        assigned.append((level, gy, gx, k))

    labels = []
    for level, (group, stride) in enumerate(zip(YOLOV3_ANCHORS, strides)):
        grid = input_size // stride
        level_labels = np.zeros((len(group), grid, grid), dtype=np.int8)
        for k, (aw, ah) in enumerate(group):
            for gy in range(grid):
                for gx in range(grid):
                    cx, cy = (gx + 0.5) * stride, (gy + 0.5) * stride
                    prior = BBox(cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2)
                    if max(iou(prior, gt) for gt in gts) > ignore_thresh:
                        level_labels[k, gy, gx] = MatchLabel.ignored.value
        labels.append(level_labels)
    for level, gy, gx, k in assigned:
        labels[level][k, gy, gx] = MatchLabel.positive.value
    return assigned, labels


def test_match_agrees_with_brute_force():
    result = match_anchors(MULTI_GTS, input_size=320, ignore_thresh=0.5)
    assigned, labels = _brute_force_match(MULTI_GTS, 320, 0.5)

    assert [(a.level, a.grid_y, a.grid_x, a.anchor_index) for a in result.assignments] == assigned
    assert [a.gt_index for a in result.assignments] == list(range(len(MULTI_GTS)))
    for got, want in zip(result.labels, labels):
        assert np.array_equal(got, want)
    assert result.count(MatchLabel.ignored) > 0


def test_match_is_invariant_to_gt_order():
    base = match_anchors(MULTI_GTS, input_size=320, ignore_thresh=0.5)
    for seed in range(5):
        order = np.random.default_rng(seed).permutation(len(MULTI_GTS))
        shuffled = match_anchors([MULTI_GTS[i] for i in order], input_size=320, ignore_thresh=0.5)

        for position, original in enumerate(order):
            got, want = shuffled.assignments[position], base.assignments[original]
            assert (got.level, got.grid_y, got.grid_x, got.anchor_index) == (
                want.level,
                want.grid_y,
                want.grid_x,
                want.anchor_index,
            )
        for got, want in zip(shuffled.labels, base.labels):
            assert np.array_equal(got, want)


def _scalar_losses(heads: list[np.ndarray], matches, targets) -> tuple[float, float, float, float]:
    box = obj = cls = iou_term = 0.0
    for level, (head, target, stride) in enumerate(zip(heads, targets, (8, 16, 32))):
        raw = head[0].reshape(3, DEPTH, *head.shape[2:])
        for k, (aw, ah) in enumerate(YOLOV3_ANCHORS[level]):
            for gy in range(raw.shape[2]):
                for gx in range(raw.shape[3]):
                    ch = [float(v) for v in raw[k, :, gy, gx]]
                    label = matches.labels[level][k, gy, gx]
                    if label == MatchLabel.negative.value:
                        obj += _bce(0.0, ch[4])
                    if label != MatchLabel.positive.value:
                        continue

                    weight = float(target.weights[k, gy, gx])
                    cx, cy = (_sigmoid(ch[0]) + gx) * stride, (_sigmoid(ch[1]) + gy) * stride
                    w, h = aw * math.exp(ch[2]), ah * math.exp(ch[3])
                    overlap = iou(BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), BBox(*target.boxes[k, gy, gx]))
                    class_id = int(target.classes[k, gy, gx])

                    box += (1 - overlap) * weight
                    obj += _bce(1.0, ch[4]) * weight
                    cls += sum(_bce(float(c == class_id), ch[5 + c]) for c in range(CLASSES)) * weight
                    iou_term += _bce(overlap, ch[-1]) * weight
    return box, obj, cls, iou_term


def test_detection_losses_match_scalar_loops(rng: np.random.Generator):
    gts = [BBox(20, 22, 40, 46), BBox(2, 4, 60, 58)]
    matches = match_anchors(gts, input_size=SIZE)
    targets = build_targets(matches, gts, [1, 0], [1.0, 0.6])
    heads = [rng.normal(0, 1, (1, 3 * DEPTH, SIZE // s, SIZE // s)) for s in (8, 16, 32)]

    report = detection_losses(heads, matches, targets, num_classes=CLASSES)
    box, obj, cls, iou_term = _scalar_losses(heads, matches, targets)
    assert report.num_positives == 2
    assert report.box_loss == pytest.approx(box, rel=1e-9)
    assert report.obj_loss == pytest.approx(obj, rel=1e-9)
    assert report.cls_loss == pytest.approx(cls, rel=1e-9)
    assert report.iou_aware_loss == pytest.approx(iou_term, rel=1e-9)


def test_detection_losses_without_positives(rng: np.random.Generator):
    matches = match_anchors([], input_size=SIZE)
    targets = build_targets(matches, [], [])
    heads = [rng.normal(0, 1, (1, 3 * DEPTH, SIZE // s, SIZE // s)) for s in (8, 16, 32)]

    report = detection_losses(heads, matches, targets, num_classes=CLASSES)
    assert report.num_positives == 0
    assert report.box_loss == report.cls_loss == report.iou_aware_loss == 0.0
    expected = sum(_softplus(float(v)) for head in heads for v in head[0].reshape(3, DEPTH, -1)[:, 4].ravel())
    assert report.obj_loss == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("level, stride", [(0, 8), (1, 16), (2, 32)])
def test_encode_decode_round_trip_over_many_boxes(level: int, stride: int, rng: np.random.Generator):
    grid = 58  # 3 * 58^2 > 10^4 boxes
    anchors = np.array(YOLOV3_ANCHORS[level], dtype=np.float64)
    gy, gx = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    shape = (3, grid, grid)

    cx = (gx + rng.uniform(0.001, 0.999, shape)) * stride
    cy = (gy + rng.uniform(0.001, 0.999, shape)) * stride
    w, h = rng.uniform(2, 500, shape), rng.uniform(2, 500, shape)
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)

    cells = np.stack([np.broadcast_to(gx, shape), np.broadcast_to(gy, shape)], axis=-1)
    anchor_wh = np.broadcast_to(anchors[:, None, None, :], (*shape, 2))
    encoded = encode_boxes(boxes.reshape(-1, 4), anchor_wh.reshape(-1, 2), cells.reshape(-1, 2), stride)

    raw = np.zeros((3, DEPTH, grid, grid))
    raw[:, :4] = np.moveaxis(encoded.reshape(*shape, 4), -1, 1)
    decoded = decode_level(raw, YOLOV3_ANCHORS[level], stride, iou_aware=True, clip=False)
    assert np.allclose(decoded.boxes, boxes, rtol=0, atol=1e-6)
