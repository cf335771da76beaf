from __future__ import annotations

import csv
import io
from typing import TYPE_CHECKING, Any, Callable, Iterable, Sequence

import msgspec

from .utils import MISSING

if TYPE_CHECKING:
    from ._types import Encoder

__all__ = ("ReportFormatter",)


class ReportFormatter:
    """
    Renders command output as bytes.

    ``formatter(obj, "csv")`` dispatches to ``format_csv``; subclass and add
    ``format_<kind>`` methods for other formats.
    """

    def __init__(self, *, encoder: Encoder = MISSING) -> None:
        self.encoder: Encoder = encoder or msgspec.json.encode

    def __call__(self, obj: Any, kind: str = "json") -> bytes:
        formatter: Callable[[Any], bytes] | None = getattr(self, f"format_{kind}", None)
        if formatter is None:
            raise ValueError(f"No formatter for {kind!r} output")
        return formatter(obj)

    def format_json(self, obj: Any) -> bytes:
        return self.encoder(obj) + b"\n"

    def format_jsonl(self, obj: Iterable[Any]) -> bytes:
        return b"".join(self.encoder(item) + b"\n" for item in obj)

    def format_csv(self, obj: tuple[Sequence[str], Iterable[Sequence[Any]]]) -> bytes:
        """``obj`` is ``(header, rows)``; floats are written with ``repr`` precision."""

        header, rows = obj
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue().encode()

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}>"
