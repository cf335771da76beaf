from __future__ import annotations

import re
import types
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Type, Union, get_args, get_origin

from .errors import ConverterNotFound, InvalidOverride
from .utils import MISSING

__all__ = ("Converter", "converter_for")


class Converter(ABC):
    """Turns the text of a ``--set key=value`` override into a typed value."""

    regex: str

    def __init__(self, *, regex: str = MISSING) -> None:
        if regex:
            self.regex = regex

    def __init_subclass__(cls, *, regex: str = MISSING) -> None:
        if regex is MISSING:
            cls.regex = r".*"
        else:
            cls.regex = regex

    @abstractmethod
    def convert(self, value: str) -> Any:
        raise NotImplementedError("This should be overriden")

    def __call__(self, key: str, value: str) -> Any:
        if not re.fullmatch(self.regex, value.strip()):
            raise InvalidOverride(key, value, self)
        try:
            return self.convert(value.strip())
        except ValueError:
            raise InvalidOverride(key, value, self) from None

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} regex={self.regex!r}>"


class IntConverter(Converter, regex=r"[+-]?[0-9][0-9_]*"):
    def convert(self, value: str) -> int:
        return int(value)


class FloatConverter(Converter, regex=r"[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?"):
    def convert(self, value: str) -> float:
        return float(value)


class BoolConverter(Converter, regex=r"(?i:true|false|yes|no|on|off|1|0)"):
    def convert(self, value: str) -> bool:
        return value.lower() in ("true", "yes", "on", "1")


class StrConverter(Converter):
    def convert(self, value: str) -> str:
        return value


class PathConverter(Converter, regex=r".+"):
    def convert(self, value: str) -> str:
        return str(Path(value))


class IntListConverter(Converter, regex=r"[0-9]+(\s*,\s*[0-9]+)*"):
    """``320,352,384`` style lists; input sizes and milestones."""

    def convert(self, value: str) -> tuple[int, ...]:
        return tuple(int(part) for part in value.split(","))


builtin_converters: dict[Any, Type[Converter]] = {
    int: IntConverter,
    float: FloatConverter,
    bool: BoolConverter,
    str: StrConverter,
    Path: PathConverter,
    tuple[int, ...]: IntListConverter,
    list[int]: IntListConverter,
}


def _strip_optional(annotation: Any) -> Any:
    if get_origin(annotation) in (Union, types.UnionType):
        args = [arg for arg in get_args(annotation) if arg is not type(None)]
        if len(args) == 1:
            return args[0]
    return annotation


def converter_for(annotation: Any) -> Converter:
    """
    Picks the converter of a field type.

    ``X | None`` resolves to the converter of ``X``; enums accept their
    values verbatim. Custom ``Converter`` subclasses are instantiated as-is.
    """

    annotation = _strip_optional(annotation)
    converter = builtin_converters.get(annotation)
    if converter is not None:
        return converter()

    if isinstance(annotation, type) and issubclass(annotation, Converter):
        return annotation()

    values = getattr(annotation, "__members__", None)
    if values is not None:
        choices = "|".join(re.escape(str(member.value)) for member in values.values())
        return StrConverter(regex=f"(?:{choices})")

    raise ConverterNotFound(annotation)
