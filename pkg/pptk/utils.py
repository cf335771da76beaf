from __future__ import annotations

import logging
import os
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from ._types import RngLike

__all__ = ()

log = logging.getLogger(__name__)

THREADS_ENV = "PPTK_THREADS"


class _MissingSentinal:
    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return "..."


MISSING: Any = _MissingSentinal()


def thread_count() -> int:
    """
    Returns the internal parallelism cap taken from ``PPTK_THREADS``.

    Unset, empty or invalid values fall back to a single thread.
    """

    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        log.warning("Ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1
    return max(1, value)


def make_rng(seed: int | RngLike | None = None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)

