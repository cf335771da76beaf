"""
Run configuration.

Values resolve in three layers: the defaults below, then a ``--config``
JSON file, then command-line flags (named options first, ``--set
key=value`` overrides last). The resolved :class:`RunConfig` is what every
command reads and what gets logged for reproducibility.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Mapping, Sequence, get_type_hints

import msgspec

from .builders import NECK_WIDTHS, Variant, get_variant
from .converters import converter_for
from .errors import InvalidConfig, InvalidOverride
from .schedule import LRScheduleConfig, get_preset

__all__ = (
    "PostprocessConfig",
    "AugmentConfig",
    "RunConfig",
    "load_config_file",
    "apply_override",
    "resolve_config",
)

log = logging.getLogger(__name__)


class PostprocessConfig(msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True):
    alpha: float = 0.5
    score_thresh: float = 0.01
    iou_thresh: float = 0.45
    max_dets: int = 100
    # None follows the variant
    iou_aware: bool | None = None


class AugmentConfig(msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True):
    # empty follows the variant's training sizes
    sizes: tuple[int, ...] = ()
    p: float = 0.5
    mixup_alpha: float = 1.5
    mixup_beta: float = 1.5
    max_expand_ratio: float = 4.0


class RunConfig(msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True):
    command: str = ""
    seed: int = 0
    variant: str = "E"
    input_size: int | None = None
    num_classes: int = 80
    depth: int = 50
    neck_widths: tuple[int, ...] = NECK_WIDTHS
    frozen_stages: int = 0
    postprocess: PostprocessConfig = msgspec.field(default_factory=PostprocessConfig)
    augment: AugmentConfig = msgspec.field(default_factory=AugmentConfig)
    schedule: LRScheduleConfig = msgspec.field(default_factory=LRScheduleConfig)
    schedule_preset: str | None = None

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise InvalidConfig("seed", f"seed must be non-negative, received {self.seed}")
        if self.input_size is not None and (self.input_size <= 0 or self.input_size % 32):
            raise InvalidConfig("input_size", f"input size must be a positive multiple of 32, received {self.input_size}")

    @property
    def resolved_variant(self) -> Variant:
        return get_variant(self.variant)

    @property
    def resolved_input_size(self) -> int:
        return self.input_size or self.resolved_variant.input_size

    @property
    def resolved_iou_aware(self) -> bool:
        if self.postprocess.iou_aware is None:
            return self.resolved_variant.iou_aware
        return self.postprocess.iou_aware

    @property
    def resolved_train_sizes(self) -> tuple[int, ...]:
        return self.augment.sizes or self.resolved_variant.train_sizes

    @property
    def resolved_schedule(self) -> LRScheduleConfig:
        if self.schedule_preset is None:
            return self.schedule
        return get_preset(self.schedule_preset, self.schedule.variant)

    @property
    def widths_overridden(self) -> bool:
        return tuple(self.neck_widths) != NECK_WIDTHS


def load_config_file(path: str | Path) -> dict[str, Any]:
    data = Path(path).read_bytes()
    try:
        return msgspec.json.decode(data, type=dict[str, Any])
    except (msgspec.DecodeError, msgspec.ValidationError) as e:
        raise InvalidConfig(str(path), str(e)) from e


def _merge(base: dict[str, Any], other: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in other.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _field_type(key: str) -> Any:
    cls: Any = RunConfig
    parts = key.split(".")
    for i, part in enumerate(parts):
        hints = get_type_hints(cls)
        if part not in hints:
            return None
        cls = hints[part]
        if i < len(parts) - 1 and not (isinstance(cls, type) and issubclass(cls, msgspec.Struct)):
            return None
    return cls


def _set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    target = data
    for part in parents:
        target = target.setdefault(part, {})
    target[leaf] = value


def apply_override(data: dict[str, Any], override: str) -> None:
    """Applies one ``key=value`` override, with dotted keys for sections (``postprocess.alpha=0.3``)."""

    key, sep, value = override.partition("=")
    key = key.strip()
    if not sep or not key:
        raise InvalidOverride(override, "", None)
    annotation = _field_type(key)
    if annotation is None:
        raise InvalidOverride(key, value, None)
    converted = converter_for(annotation)(key, value)
    _set_dotted(data, key, msgspec.to_builtins(converted))


def resolve_config(
    *,
    config_file: str | Path | None = None,
    flags: Mapping[str, Any] | None = None,
    overrides: Sequence[str] = (),
) -> RunConfig:
    """
    Resolves the layered configuration into a validated :class:`RunConfig`.

    ``flags`` maps dotted field names to values; ``None`` values mean the
    flag was not given and are skipped.
    """

    data: dict[str, Any] = msgspec.to_builtins(RunConfig())
    source = "defaults"
    if config_file is not None:
        data = _merge(data, load_config_file(config_file))
        source = str(config_file)

    for key, value in (flags or {}).items():
        if value is not None:
            _set_dotted(data, key, msgspec.to_builtins(value))
    for override in overrides:
        apply_override(data, override)

    try:
        config = msgspec.convert(data, RunConfig)
    except msgspec.ValidationError as e:
        raise InvalidConfig(source, str(e)) from e
    log.debug("Resolved configuration from %s", source)
    return config
