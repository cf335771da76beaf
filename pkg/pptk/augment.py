from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Sequence

import msgspec
import numpy as np
from PIL import Image, UnidentifiedImageError

from ._types import FloatArray, RngLike
from .boxes import iou_matrix
from .errors import SampleShapeMismatch, TensorFormatError

__all__ = (
    "MEAN",
    "STD",
    "SIZES_BASE",
    "SIZES_LARGE",
    "CROP_MIN_IOUS",
    "Sample",
    "AugmentSidecar",
    "Pipeline",
    "check_size_list",
    "mixup",
    "color_distort",
    "random_color_distort",
    "expand",
    "random_expand",
    "crop",
    "random_crop",
    "flip",
    "random_flip",
    "normalize",
    "denormalize",
    "resize",
    "sample_input_size",
    "load_ppm",
)

log = logging.getLogger(__name__)

MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)

SIZES_BASE: tuple[int, ...] = tuple(range(320, 608 + 1, 32))
SIZES_LARGE: tuple[int, ...] = tuple(range(320, 768 + 1, 32))

CROP_MIN_IOUS: tuple[float | None, ...] = (0.1, 0.3, 0.5, 0.7, 0.9, None)

# RGB -> YIQ
_YIQ = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.596, -0.274, -0.321],
        [0.211, -0.523, 0.311],
    ]
)
_YIQ_INV = np.linalg.inv(_YIQ)
_LUMA = _YIQ[0]


class Sample:
    """
    One training sample.

    ``image`` is (3, H, W) float32; ``boxes`` (K, 4) corner pixels;
    ``labels`` (K,) class ids; ``box_weights`` (K,) mixup weights in [0, 1].
    """

    __slots__ = ("image", "boxes", "labels", "box_weights", "applied", "mixup_lambda")

    def __init__(
        self,
        image: np.ndarray,
        boxes: np.ndarray | Sequence[Sequence[float]] = (),
        labels: np.ndarray | Sequence[int] = (),
        box_weights: np.ndarray | Sequence[float] | None = None,
        *,
        applied: Sequence[str] = (),
        mixup_lambda: float | None = None,
    ) -> None:
        self.image: FloatArray = np.asarray(image, dtype=np.float32)
        self.boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if box_weights is None:
            self.box_weights = np.ones(len(self.boxes))
        else:
            self.box_weights = np.asarray(box_weights, dtype=np.float64).reshape(-1)
        self.applied: list[str] = list(applied)
        self.mixup_lambda = mixup_lambda

        if self.image.ndim != 3:
            raise ValueError(f"image must be (C, H, W), received {self.image.shape!r}")
        if not len(self.boxes) == len(self.labels) == len(self.box_weights):
            sizes = (len(self.boxes), len(self.labels), len(self.box_weights))
            raise ValueError(f"boxes, labels and box_weights must align, received lengths {sizes!r}")

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]

    def replace(self, *, op: str | None = None, **changes) -> Sample:
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(changes)
        if op is not None:
            fields["applied"] = [*self.applied, op]
        return Sample(
            fields["image"],
            fields["boxes"],
            fields["labels"],
            fields["box_weights"],
            applied=fields["applied"],
            mixup_lambda=fields["mixup_lambda"],
        )

    def boxes_in_bounds(self, tol: float = 1e-6) -> bool:
        b = self.boxes
        return bool(
            np.all(b[:, 0] >= -tol)
            and np.all(b[:, 1] >= -tol)
            and np.all(b[:, 2] <= self.width + tol)
            and np.all(b[:, 3] <= self.height + tol)
            and np.all(b[:, 2] >= b[:, 0])
            and np.all(b[:, 3] >= b[:, 1])
        )

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} image={self.image.shape!r} boxes={len(self.boxes)} applied={self.applied!r}>"


class AugmentSidecar(msgspec.Struct, frozen=True, kw_only=True):
    boxes: list[list[float]]
    labels: list[int]
    weights: list[float]
    applied_ops: list[str]
    seed: int | None
    size: int
    mixup_lambda: float | None = None

    @classmethod
    def from_sample(cls, sample: Sample, *, seed: int | None, size: int) -> AugmentSidecar:
        return cls(
            boxes=sample.boxes.tolist(),
            labels=sample.labels.tolist(),
            weights=sample.box_weights.tolist(),
            applied_ops=list(sample.applied),
            seed=seed,
            size=size,
            mixup_lambda=sample.mixup_lambda,
        )


def check_size_list(sizes: Sequence[int]) -> tuple[int, ...]:
    if not sizes:
        raise ValueError("size list is empty")
    if any(s % 32 for s in sizes):
        raise ValueError(f"sizes must be multiples of 32, received {list(sizes)!r}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sizes must be strictly increasing, received {list(sizes)!r}")
    return tuple(sizes)


def mixup(a: Sample, b: Sample, rng: RngLike, alpha: float = 1.5, beta: float = 1.5) -> Sample:
    """Blends ``a`` and ``b`` with ``lambda ~ Beta(alpha, beta)``; boxes of each side carry their share as weight."""

    if a.image.shape != b.image.shape:
        raise SampleShapeMismatch(a.image.shape, b.image.shape)

    lam = float(rng.beta(alpha, beta))
    image = (lam * a.image.astype(np.float64) + (1 - lam) * b.image.astype(np.float64)).astype(np.float32)
    return a.replace(
        op="mixup",
        image=image,
        boxes=np.concatenate([a.boxes, b.boxes]),
        labels=np.concatenate([a.labels, b.labels]),
        box_weights=np.concatenate([a.box_weights * lam, b.box_weights * (1 - lam)]),
        mixup_lambda=lam,
    )


def color_distort(
    sample: Sample,
    brightness: float = 0.0,
    contrast: float = 1.0,
    saturation: float = 1.0,
    hue: float = 0.0,
) -> Sample:
    """
    Deterministic colour perturbation, applied in order and clamped to [0, 1].

    ``brightness`` is added, ``contrast`` multiplies, ``saturation`` blends
    each pixel with its luma and ``hue`` rotates chroma by that many degrees.
    """

    img = sample.image.astype(np.float64)
    if brightness:
        img = img + brightness
    if contrast != 1:
        img = img * contrast
    if saturation != 1:
        gray = np.tensordot(_LUMA, img, axes=(0, 0))[None]
        img = gray * (1 - saturation) + img * saturation
    if hue:
        theta = math.radians(hue)
        rot = np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, math.cos(theta), -math.sin(theta)],
                [0.0, math.sin(theta), math.cos(theta)],
            ]
        )
        transform = _YIQ_INV @ rot @ _YIQ
        img = np.tensordot(transform, img, axes=(1, 0))
    return sample.replace(image=np.clip(img, 0.0, 1.0).astype(np.float32))


def random_color_distort(
    sample: Sample,
    rng: RngLike,
    p: float = 0.5,
    *,
    brightness: float = 0.125,
    contrast: tuple[float, float] = (0.5, 1.5),
    saturation: tuple[float, float] = (0.5, 1.5),
    hue: float = 18.0,
) -> Sample:
    if rng.random() >= p:
        return sample
    out = color_distort(
        sample,
        brightness=float(rng.uniform(-brightness, brightness)),
        contrast=float(rng.uniform(*contrast)),
        saturation=float(rng.uniform(*saturation)),
        hue=float(rng.uniform(-hue, hue)),
    )
    out.applied.append("random_color_distort")
    return out


def expand(sample: Sample, ratio: float, offset: tuple[int, int] = (0, 0), fill: Sequence[float] = MEAN) -> Sample:
    """Places the image at ``offset`` (y, x) on a ``ratio``-times larger canvas filled with ``fill``."""

    c, h, w = sample.image.shape
    out_h, out_w = int(h * ratio), int(w * ratio)
    y, x = offset
    if y < 0 or x < 0 or y + h > out_h or x + w > out_w:
        raise ValueError(f"offset {offset!r} does not fit a {h}x{w} image on a {out_h}x{out_w} canvas")

    canvas = np.empty((c, out_h, out_w), dtype=np.float32)
    canvas[:] = np.asarray(fill, dtype=np.float32)[:c, None, None]
    canvas[:, y : y + h, x : x + w] = sample.image
    return sample.replace(image=canvas, boxes=sample.boxes + np.array([x, y, x, y], dtype=np.float64))


def random_expand(
    sample: Sample,
    rng: RngLike,
    p: float = 0.5,
    max_ratio: float = 4.0,
    fill: Sequence[float] = MEAN,
) -> Sample:
    if rng.random() >= p:
        return sample
    _, h, w = sample.image.shape
    ratio = float(rng.uniform(1.0, max_ratio))
    out_h, out_w = int(h * ratio), int(w * ratio)
    y = int(rng.uniform(0, out_h - h))
    x = int(rng.uniform(0, out_w - w))
    out = expand(sample, ratio, (y, x), fill)
    out.applied.append("random_expand")
    return out


def crop(sample: Sample, window: tuple[int, int, int, int]) -> Sample:
    """
    Crops to ``window`` (x1, y1, x2, y2).

    Boxes whose centers fall strictly inside the window are kept and
    clipped; the others are dropped with their labels and weights.
    """

    x1, y1, x2, y2 = window
    boxes = sample.boxes
    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    keep = (cx > x1) & (cx < x2) & (cy > y1) & (cy < y2)

    kept = boxes[keep].copy()
    kept[:, [0, 2]] = np.clip(kept[:, [0, 2]], x1, x2) - x1
    kept[:, [1, 3]] = np.clip(kept[:, [1, 3]], y1, y2) - y1
    return sample.replace(
        image=sample.image[:, y1:y2, x1:x2].copy(),
        boxes=kept,
        labels=sample.labels[keep],
        box_weights=sample.box_weights[keep],
    )


def random_crop(
    sample: Sample,
    rng: RngLike,
    p: float = 0.5,
    *,
    min_ious: Sequence[float | None] = CROP_MIN_IOUS,
    trials: int = 50,
    scale: tuple[float, float] = (0.3, 1.0),
    aspect_ratio: tuple[float, float] = (0.5, 2.0),
) -> Sample:
    """
    When triggered, picks a minimum-IoU constraint (``None`` accepts any
    window) and samples up to ``trials`` windows; the first window that
    meets the constraint and keeps at least one box center is applied.
    Otherwise the sample is returned unchanged.
    """

    if rng.random() >= p:
        return sample
    if not len(sample.boxes):
        return sample.replace(op="random_crop")

    min_iou = min_ious[int(rng.integers(len(min_ious)))]
    _, h, w = sample.image.shape
    for _ in range(trials):
        s = float(rng.uniform(*scale))
        ar = float(rng.uniform(*aspect_ratio))
        cw = int(w * s * math.sqrt(ar))
        ch = int(h * s / math.sqrt(ar))
        if cw < 1 or ch < 1 or cw > w or ch > h:
            continue
        x1 = int(rng.uniform(0, w - cw))
        y1 = int(rng.uniform(0, h - ch))
        window = (x1, y1, x1 + cw, y1 + ch)

        if min_iou is not None:
            overlaps = iou_matrix(np.array([window], dtype=np.float64), sample.boxes)
            if overlaps.max() < min_iou:
                continue

        boxes = sample.boxes
        cx = (boxes[:, 0] + boxes[:, 2]) / 2
        cy = (boxes[:, 1] + boxes[:, 3]) / 2
        if not np.any((cx > window[0]) & (cx < window[2]) & (cy > window[1]) & (cy < window[3])):
            continue
        out = crop(sample, window)
        out.applied.append("random_crop")
        return out

    log.debug("random_crop found no window in %d trials", trials)
    return sample.replace(op="random_crop")


def flip(sample: Sample) -> Sample:
    w = sample.width
    boxes = sample.boxes.copy()
    boxes[:, 0] = w - sample.boxes[:, 2]
    boxes[:, 2] = w - sample.boxes[:, 0]
    return sample.replace(image=sample.image[:, :, ::-1].copy(), boxes=boxes)


def random_flip(sample: Sample, rng: RngLike, p: float = 0.5) -> Sample:
    if rng.random() >= p:
        return sample
    out = flip(sample)
    out.applied.append("random_flip")
    return out


def normalize(sample: Sample, mean: Sequence[float] = MEAN, std: Sequence[float] = STD) -> Sample:
    m = np.asarray(mean, dtype=np.float64)[:, None, None]
    s = np.asarray(std, dtype=np.float64)[:, None, None]
    return sample.replace(op="normalize", image=((sample.image.astype(np.float64) - m) / s).astype(np.float32))


def denormalize(sample: Sample, mean: Sequence[float] = MEAN, std: Sequence[float] = STD) -> Sample:
    m = np.asarray(mean, dtype=np.float64)[:, None, None]
    s = np.asarray(std, dtype=np.float64)[:, None, None]
    return sample.replace(image=(sample.image.astype(np.float64) * s + m).astype(np.float32))


def resize(sample: Sample, size: int) -> Sample:
    """Bilinear resize to ``size`` x ``size``; boxes scale with each axis."""

    _, h, w = sample.image.shape
    channels = [
        np.asarray(Image.fromarray(channel).resize((size, size), Image.Resampling.BILINEAR), dtype=np.float32)
        for channel in sample.image
    ]
    scale = np.array([size / w, size / h, size / w, size / h])
    return sample.replace(op=f"resize_{size}", image=np.stack(channels), boxes=sample.boxes * scale)


def sample_input_size(rng: RngLike, sizes: Sequence[int] = SIZES_BASE) -> int:
    if not sizes:
        raise ValueError("size list is empty")
    return int(sizes[int(rng.integers(len(sizes)))])


def _pad_to(sample: Sample, h: int, w: int) -> Sample:
    if sample.image.shape[1:] == (h, w):
        return sample
    canvas = np.zeros((sample.image.shape[0], h, w), dtype=np.float32)
    canvas[:, : sample.height, : sample.width] = sample.image
    return sample.replace(image=canvas)


class Pipeline:
    """
    The fixed preprocessing chain.

    mixup, colour distortion, expand, crop, flip, normalize, then a resize
    to a size drawn from ``sizes``. Every random stage consumes ``rng`` in
    that order, so a fixed seed reproduces the output exactly.
    """

    def __init__(
        self,
        sizes: Sequence[int] = SIZES_BASE,
        *,
        p: float = 0.5,
        mixup_alpha: float = 1.5,
        mixup_beta: float = 1.5,
        max_expand_ratio: float = 4.0,
    ) -> None:
        self.sizes = check_size_list(sizes)
        self.p = p
        self.mixup_alpha = mixup_alpha
        self.mixup_beta = mixup_beta
        self.max_expand_ratio = max_expand_ratio

    def __call__(self, sample: Sample, rng: RngLike, other: Sample | None = None) -> Sample:
        if other is not None:
            h = max(sample.height, other.height)
            w = max(sample.width, other.width)
            sample = mixup(_pad_to(sample, h, w), _pad_to(other, h, w), rng, self.mixup_alpha, self.mixup_beta)
        sample = random_color_distort(sample, rng, self.p)
        sample = random_expand(sample, rng, self.p, self.max_expand_ratio)
        sample = random_crop(sample, rng, self.p)
        sample = random_flip(sample, rng, self.p)
        sample = normalize(sample)
        return resize(sample, sample_input_size(rng, self.sizes))

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} sizes={list(self.sizes)!r} p={self.p}>"


def load_ppm(path: str | Path) -> FloatArray:
    """Reads an 8-bit RGB image (binary PPM, or anything Pillow decodes) as (3, H, W) floats in [0, 1]."""

    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError) as e:
        raise TensorFormatError(str(path), 0, f"not a decodable image: {e}") from e
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0, dtype=np.float32)
