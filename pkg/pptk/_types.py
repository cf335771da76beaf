from __future__ import annotations

from typing import TYPE_CHECKING, Any, Callable, Protocol, Sequence, TypeAlias, TypeVar

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from .groups import Group

    GroupT = TypeVar("GroupT", bound=Group, covariant=True)
else:
    GroupT = TypeVar("GroupT", bound="Group")

FloatArray: TypeAlias = npt.NDArray[np.float32]
Float64Array: TypeAlias = npt.NDArray[np.float64]
IntArray: TypeAlias = npt.NDArray[np.int64]

# (width, height) pairs, pixels
AnchorSizes: TypeAlias = Sequence[tuple[float, float]]
# one anchor group per level, finest stride first
AnchorTable: TypeAlias = Sequence[AnchorSizes]

ScalarFunc: TypeAlias = Callable[[float], float]
Encoder: TypeAlias = Callable[[Any], bytes]
CommandCallback: TypeAlias = Callable[..., int | None]


class RngLike(Protocol):
    def random(self, size: Any = ...) -> Any:
        ...

    def uniform(self, low: float = ..., high: float = ..., size: Any = ...) -> Any:
        ...

    def integers(self, low: int, high: int | None = ..., size: Any = ...) -> Any:
        ...

    def beta(self, a: float, b: float, size: Any = ...) -> Any:
        ...
