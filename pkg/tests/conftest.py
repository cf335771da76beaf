from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pptk import save_tensor

FIXTURES = Path(__file__).parent / "fixtures"

TOY_SIZE = 64
TOY_CLASSES = 2
# tx, ty, tw, th, obj, cls0, cls1, iou
TOY_DEPTH = 5 + TOY_CLASSES + 1


def _slot(head: np.ndarray, anchor: int, y: int, x: int, **channels: float) -> None:
    names = ("tx", "ty", "tw", "th", "obj", "cls0", "cls1", "iou")
    for name, value in channels.items():
        head[0, anchor * TOY_DEPTH + names.index(name), y, x] = value


def make_toy_heads() -> list[np.ndarray]:
    """
    Head outputs of a 64px, 2-class, IoU-aware detector with four live slots.

    Every other anchor slot has objectness logit -30; the expected
    detections are committed in ``fixtures/postprocess_golden.json``.
    """

    heads = []
    for stride in (8, 16, 32):
        grid = TOY_SIZE // stride
        head = np.zeros((1, 3 * TOY_DEPTH, grid, grid), dtype=np.float32)
        for a in range(3):
            head[0, a * TOY_DEPTH + 4] = -30.0
        heads.append(head)

    # stride 8, anchor (16, 30): box (28, 13, 44, 43), class 1, score ~1
    _slot(heads[0], 1, 3, 4, obj=30, cls0=-30, cls1=30, iou=30)
    # stride 8, anchor (33, 23) resized onto the same box at score 0.5: suppressed
    _slot(heads[0], 2, 3, 4, obj=30, cls0=-30, cls1=0, iou=30, tw=np.log(16 / 33), th=np.log(30 / 23))
    # stride 16, anchor (30, 61): box (25, 0, 55, 54.5) after clipping, IoU 0.29 with the first
    _slot(heads[1], 0, 1, 2, obj=30, cls0=-30, cls1=0, iou=30)
    # stride 32, anchor (116, 90): box (0, 0, 64, 61) after clipping, class 0, score sqrt(0.5) * 0.5
    _slot(heads[2], 0, 0, 0, obj=30, cls0=0, cls1=-30, iou=0)
    return heads


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def toy_heads() -> list[np.ndarray]:
    return make_toy_heads()


@pytest.fixture
def toy_head_files(tmp_path: Path, toy_heads: list[np.ndarray]) -> list[Path]:
    paths = []
    for level, head in enumerate(toy_heads):
        path = tmp_path / f"head.{level}.pptk"
        save_tensor(path, head)
        paths.append(path)
    return paths


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
