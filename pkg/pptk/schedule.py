from __future__ import annotations

import logging
import math
from typing import Sequence

import msgspec
import numpy as np

from ._types import Float64Array
from .enums import ScheduleVariant
from .errors import InvalidScheduleConfig, IterationOutOfRange

__all__ = (
    "LRScheduleConfig",
    "PRESETS",
    "get_preset",
    "lr_at",
    "schedule_table",
    "global_norm",
    "clip_gradients",
    "linear_scaled_lr",
)

log = logging.getLogger(__name__)


class LRScheduleConfig(msgspec.Struct, frozen=True, kw_only=True):
    """
    Learning-rate schedule of a 96-image minibatch run.

    The cosine variant decays from ``base_lr`` at the end of warmup to
    ``cosine_end_lr`` at ``total_iters`` and ignores the milestones. On
    full-length runs it has not been shown to beat the step schedule, so it
    is never the default.
    """

    base_lr: float = 0.005
    warmup_iters: int = 4000
    milestones: tuple[int, ...] = (400_000, 450_000)
    decay_factor: float = 0.1
    total_iters: int = 500_000
    variant: ScheduleVariant = ScheduleVariant.step
    momentum: float = 0.9
    weight_decay: float = 0.0005
    cosine_end_lr: float = 0.0

    def __post_init__(self) -> None:
        if self.base_lr <= 0 or self.total_iters <= 0 or self.warmup_iters < 0:
            raise InvalidScheduleConfig("base_lr and total_iters must be positive, warmup_iters non-negative")
        if not 0 < self.decay_factor <= 1:
            raise InvalidScheduleConfig(f"decay_factor must lie in (0, 1], received {self.decay_factor}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise InvalidScheduleConfig(f"milestones must be strictly increasing, received {list(self.milestones)!r}")
        if self.milestones and self.milestones[-1] >= self.total_iters:
            raise InvalidScheduleConfig(f"milestones must precede total_iters={self.total_iters}")
        if self.milestones and self.warmup_iters >= self.milestones[0]:
            raise InvalidScheduleConfig(f"warmup_iters={self.warmup_iters} must precede the first milestone")
        if self.warmup_iters >= self.total_iters:
            raise InvalidScheduleConfig("warmup must end before total_iters")


PRESETS: dict[str, LRScheduleConfig] = {
    "coco": LRScheduleConfig(),
    # the short ablation schedule: a single decay two thirds of the way in
    "minitrain": LRScheduleConfig(total_iters=90_000, milestones=(60_000,)),
}


def get_preset(name: str, variant: ScheduleVariant | str = ScheduleVariant.step) -> LRScheduleConfig:
    try:
        preset = PRESETS[name]
    except KeyError:
        raise InvalidScheduleConfig(f"unknown preset {name!r}, expected one of {', '.join(PRESETS)}") from None
    return msgspec.structs.replace(preset, variant=ScheduleVariant(variant))


def lr_at(cfg: LRScheduleConfig, iteration: int) -> float:
    """
    Learning rate at ``iteration``.

    Warmup rises linearly from 0. The step variant then divides by
    ``1 / decay_factor`` once per milestone reached (``iteration >=
    milestone``); the cosine variant follows a half cosine to ``cosine_end_lr``.
    """

    if not 0 <= iteration <= cfg.total_iters:
        raise IterationOutOfRange(iteration, cfg.total_iters)

    if iteration < cfg.warmup_iters:
        return cfg.base_lr * iteration / cfg.warmup_iters

    match cfg.variant:
        case ScheduleVariant.step:
            reached = sum(1 for m in cfg.milestones if iteration >= m)
            # 0.005 / 10 == 0.0005 exactly; 0.005 * 0.1 is not
            return cfg.base_lr / (1 / cfg.decay_factor) ** reached
        case ScheduleVariant.cosine:
            progress = (iteration - cfg.warmup_iters) / (cfg.total_iters - cfg.warmup_iters)
            return cfg.cosine_end_lr + 0.5 * (cfg.base_lr - cfg.cosine_end_lr) * (1 + math.cos(math.pi * progress))


def schedule_table(cfg: LRScheduleConfig, stride: int = 1000) -> list[tuple[int, float]]:
    """``(iteration, lr)`` rows every ``stride`` iterations, always ending at ``total_iters``."""

    if stride < 1:
        raise ValueError("stride must be >= 1")
    iterations = list(range(0, cfg.total_iters + 1, stride))
    if iterations[-1] != cfg.total_iters:
        iterations.append(cfg.total_iters)
    return [(it, lr_at(cfg, it)) for it in iterations]


def global_norm(grads: np.ndarray | Sequence[np.ndarray]) -> float:
    if isinstance(grads, np.ndarray):
        return float(np.sqrt(np.sum(np.square(grads, dtype=np.float64))))
    return float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in grads)))


def clip_gradients(grads: np.ndarray, max_norm: float = 35.0) -> Float64Array:
    """Rescales ``grads`` to ``max_norm`` when its L2 norm exceeds it."""

    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, received {max_norm}")
    grads = np.asarray(grads, dtype=np.float64)
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    log.debug("Clipping gradient norm %.4g to %.4g", norm, max_norm)
    return grads * (max_norm / norm)


def linear_scaled_lr(base_lr: float, batch_size: int, reference_batch: int = 96) -> float:
    """Scales a learning rate tuned for ``reference_batch`` images (8 GPUs x 12) to ``batch_size``."""

    return base_lr * batch_size / reference_batch
