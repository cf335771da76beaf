from __future__ import annotations

import inspect
from typing import TYPE_CHECKING

from .commands import Command
from .utils import MISSING

if TYPE_CHECKING:
    from .app import Application
    from .context import Context


__all__ = ("Group",)


class Group:
    """
    A class whose :func:`~pptk.commands.command` methods are registered together.

    Subclass it, decorate methods with ``@command()`` and pass an instance
    to :meth:`Application.add_group`. Commands receive the group instance
    as ``self``.
    """

    title: str
    __commands__: list[Command]
    app: Application

    def __init_subclass__(cls, title: str = MISSING) -> None:
        cls.title = title or cls.__name__

    def __init__(self, app: Application) -> None:
        self.__commands__ = []
        self.app = app

        for _, cmd in inspect.getmembers(self, predicate=lambda m: isinstance(m, Command)):
            cmd: Command
            cmd._group = self
            self.__commands__.append(cmd)

    @property
    def name(self) -> str:
        return self.__class__.__name__.lower()

    @property
    def commands(self) -> list[Command]:
        return self.__commands__

    def on_command_error(self, ctx: Context, error: Exception) -> int | None:
        """
        Override to handle errors raised by this group's commands; the default defers to the application.

        Runs before the application's handler. Return an exit code to handle the error, or ``None`` to defer.
        """

        ...

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} title={self.title!r} commands={len(self.commands)}>"
