from __future__ import annotations

import argparse
import logging
import sys
from typing import TYPE_CHECKING, Any, Callable, Sequence

import msgspec

from .commands import Command, command as command_deco
from .config import resolve_config
from .context import Context
from .enums import ExitCode
from .errors import (
    AnnotationFormatError,
    CommandAlreadyAdded,
    CommandException,
    ExpectationFailed,
    PPTKException,
    TensorFormatError,
)
from .state import State
from .utils import MISSING

if TYPE_CHECKING:
    from ._types import CommandCallback, Encoder
    from .formatters import ReportFormatter
    from .groups import Group
    from .parameters import Parameter

__all__ = ("Application", "configure_logging")

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def configure_logging(level: str | int = logging.WARNING) -> logging.Handler:
    """
    Points the ``pptk`` logger at a single stderr handler.

    Calling it again replaces the handler instead of stacking another one.
    """

    logger = logging.getLogger("pptk")
    for handler in list(logger.handlers):
        if getattr(handler, "_pptk_cli", False):
            logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._pptk_cli = True  # type: ignore
    logger.addHandler(handler)
    logger.setLevel(level)
    return handler


class Application:
    """
    The command-line application.

    Commands are added one by one with :meth:`add_command` / :meth:`command`
    or in bulk with :meth:`add_group`, then :meth:`run` parses ``argv``,
    resolves the :class:`~pptk.config.RunConfig` and dispatches.
    """

    def __init__(
        self,
        *,
        prog: str = "pptk",
        description: str = MISSING,
        version: str = MISSING,
        encoder: Encoder = MISSING,
        formatter: ReportFormatter = MISSING,
    ) -> None:
        self.prog = prog
        self.description = description or None
        self.version = version or None
        self._state = State(self, encoder=encoder, formatter=formatter)

    def add_group(self, group: Group) -> None:
        """
        Registers a group and adds the commands it contains

        Parameters
        -----------
        group: Group
            The group you are adding

        Raises
        -----------
        CommandAlreadyAdded
            If the group, or a command with the same name, was already registered
        """

        if group in self._state.groups:
            raise CommandAlreadyAdded(group.name)

        for cmd in group.commands:
            self.add_command(cmd)

        self._state.groups.append(group)

    def add_command(self, cmd: Command, /) -> None:
        if cmd.name in self._state.commands:
            raise CommandAlreadyAdded(cmd.name)
        cmd._state = self._state
        self._state.commands[cmd.name] = cmd

    def command(
        self, name: str = MISSING, *, parameters: list[Parameter] = MISSING, hidden: bool = False
    ) -> Callable[[CommandCallback], Command]:
        def decorator(callback: CommandCallback) -> Command:
            cmd = command_deco(name, parameters=parameters, hidden=hidden)(callback)
            self.add_command(cmd)
            return cmd

        return decorator

    @property
    def groups(self) -> list[Group]:
        return self._state.groups

    @property
    def commands(self) -> list[Command]:
        return list(self._state.commands.values())

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self.prog, description=self.description)
        if self.version:
            parser.add_argument("--version", action="version", version=f"%(prog)s {self.version}")
        parser.add_argument("--config", metavar="PATH", help="JSON file with RunConfig fields")
        parser.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config field, e.g. postprocess.alpha=0.3 (repeatable)",
        )
        parser.add_argument("--seed", type=int, default=None, help="seed of every random draw")
        parser.add_argument("--log-level", choices=_LEVELS, default=None)
        parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

        subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
        for cmd in self._state.commands.values():
            cmd.add_to(subparsers)
        return parser

    @staticmethod
    def _log_level(args: argparse.Namespace) -> str:
        if args.log_level:
            return args.log_level
        return {0: "WARNING", 1: "INFO"}.get(args.verbose, "DEBUG")

    def run(self, argv: Sequence[str] | None = None) -> int:
        """Runs one command and returns its exit code."""

        parser = self.build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return e.code if isinstance(e.code, int) else ExitCode.USAGE.value

        configure_logging(self._log_level(args))
        cmd: Command = args._command

        try:
            config = resolve_config(
                config_file=args.config,
                flags={"command": cmd.name, "seed": args.seed, **cmd.config_flags(args)},
                overrides=args.set,
            )
        except Exception as e:
            log.error("%s", e)
            return self.exit_code_for(e).value

        log.info("Resolved config: %s", self._state.encoder(config).decode())
        return cmd(Context(args, config, self._state, cmd))

    def on_command_error(self, ctx: Context, error: Exception) -> int | None:
        code = self.exit_code_for(error)
        log.error("%s failed: %s", ctx.command.name, error)
        log.debug("Traceback of %s", ctx.command.name, exc_info=error)
        return code.value

    @staticmethod
    def exit_code_for(error: BaseException) -> ExitCode:
        match error:
            case ExpectationFailed():
                return ExitCode.CHECK_FAILED
            case CommandException():
                return ExitCode.USAGE
            case TensorFormatError() | AnnotationFormatError() | OSError():
                return ExitCode.IO
            case FloatingPointError() | OverflowError() | ZeroDivisionError():
                return ExitCode.NUMERIC
            case PPTKException() | msgspec.ValidationError() | ValueError():
                return ExitCode.VALIDATION
            case _:
                raise error

    def __call__(self, argv: Sequence[str] | None = None) -> Any:
        return self.run(argv)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} commands={len(self.commands)} groups={len(self.groups)}>"
