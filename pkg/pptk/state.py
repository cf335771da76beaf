from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import msgspec

from .formatters import ReportFormatter
from .utils import MISSING

if TYPE_CHECKING:
    from ._types import Encoder
    from .app import Application
    from .commands import Command
    from .context import Context
    from .groups import Group


__all__ = ("State",)

log = logging.getLogger(__name__)


class State:
    encoder: Encoder
    formatter: ReportFormatter

    def __init__(
        self,
        app: Application,
        *,
        encoder: Encoder = MISSING,
        formatter: ReportFormatter = MISSING,
    ):
        self.app = app
        self.encoder = encoder or msgspec.json.encode
        self.formatter = formatter or ReportFormatter(encoder=self.encoder)

        self.commands: dict[str, Command] = {}
        self.groups: list[Group] = []

    def on_command_error(self, ctx: Context, error: Exception) -> int:
        cmd = ctx.command

        code = None
        if cmd._group is not None:
            code = cmd._group.on_command_error(ctx, error)

        if code is None:
            code = self.app.on_command_error(ctx, error)
        return int(code)
