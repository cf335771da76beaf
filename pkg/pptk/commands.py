from __future__ import annotations

import argparse
import logging
from typing import TYPE_CHECKING, Any, Callable, Generic

from ._types import CommandCallback, GroupT
from .enums import ExitCode
from .parameters import Parameter
from .utils import MISSING

if TYPE_CHECKING:
    from .context import Context
    from .state import State

__all__ = ("command", "Command")

log = logging.getLogger(__name__)


class Command(Generic[GroupT]):
    """A subcommand: a callback plus the parameters that build its argument parser."""

    callback: CommandCallback
    _group: GroupT | None
    _state: State

    def __init__(
        self,
        name: str,
        *,
        parameters: list[Parameter] = MISSING,
        hidden: bool = False,
    ) -> None:
        if not name or name.startswith("-"):
            raise ValueError(f"Invalid command name {name!r}")

        self._name = name
        self._parameters: list[Parameter] = list(parameters or [])
        self._group = None
        self.hidden = hidden

    @property
    def name(self) -> str:
        return self._name

    @property
    def group(self) -> GroupT | None:
        return self._group

    @property
    def parameters(self) -> list[Parameter]:
        return self._parameters

    @property
    def description(self) -> str:
        return (self.callback.__doc__ or "").strip()

    @property
    def summary(self) -> str:
        return self.description.splitlines()[0] if self.description else ""

    def add_to(self, subparsers: Any) -> argparse.ArgumentParser:
        kwargs: dict[str, Any] = {"description": self.description}
        if not self.hidden:
            kwargs["help"] = self.summary
        parser = subparsers.add_parser(self.name, **kwargs)
        for param in self._parameters:
            param.add_to(parser)
        parser.set_defaults(_command=self)
        return parser

    def config_flags(self, args: argparse.Namespace) -> dict[str, Any]:
        """The parsed values of config-backed parameters, keyed by their dotted config key."""

        return {p.config_key: getattr(args, p.dest, None) for p in self._parameters if p.config_key is not None}

    def __call__(self, ctx: Context) -> int:
        args: list[Any] = []
        if self._group is not None:
            args.append(self._group)
        args.append(ctx)

        try:
            result = self.callback(*args)
        except Exception as e:
            return self._state.on_command_error(ctx, e)

        if result is None:
            return ExitCode.OK.value
        if isinstance(result, ExitCode):
            return result.value
        return int(result)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} name={self.name!r} parameters={len(self.parameters)} hidden={self.hidden!r}>"


def command(
    name: str = MISSING,
    *,
    parameters: list[Parameter] = MISSING,
    hidden: bool = False,
) -> Callable[[CommandCallback], Command]:
    """
    Turns a function into a :class:`Command`.

    The name defaults to the function's name with underscores replaced by
    dashes; the docstring becomes the help text.
    """

    def decorator(callback: CommandCallback) -> Command:
        cmd = Command(name or callback.__name__.strip("_").replace("_", "-"), parameters=parameters, hidden=hidden)
        cmd.callback = callback
        return cmd

    return decorator
