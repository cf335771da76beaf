from __future__ import annotations

import argparse
from typing import Any, Sequence, Type

from .utils import MISSING

__all__ = ("Parameter", "Option", "Argument")


class Parameter:
    """
    One command-line input of a command.

    Parameters with a ``config_key`` feed the layered :class:`~pptk.config.RunConfig`
    (the flag wins over the config file); the others are read from the
    parsed arguments directly.
    """

    def __init__(
        self,
        *,
        name: str,
        type: Type = str,
        required: bool = False,
        default: Any = MISSING,
        help: str = "",
        config_key: str | None = None,
        choices: Sequence[Any] | None = None,
    ) -> None:
        self.name = name
        self.annotation = type
        self.required = required
        self.default = default
        self.help = help
        self.config_key = config_key
        self.choices = choices

    @property
    def dest(self) -> str:
        return self.name.lstrip("-").replace("-", "_")

    def _kwargs(self) -> dict[str, Any]:
        kwargs: dict[str, Any] = {"help": self.help}
        if self.annotation is bool:
            kwargs["action"] = "store_true"
            kwargs["default"] = None if self.config_key else bool(self.default)
            return kwargs
        kwargs["type"] = self.annotation
        # None marks a config-backed flag as not given
        kwargs["default"] = None if self.config_key or self.default is MISSING else self.default
        if self.choices is not None:
            kwargs["choices"] = list(self.choices)
        return kwargs

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        raise NotImplementedError

    def __repr__(self) -> str:
        x = [f"{n}={getattr(self, n)!r}" for n in ("name", "annotation", "required", "config_key")]
        return f"<{self.__class__.__name__} {' '.join(x)}>"


class Option(Parameter):
    def __init__(self, name: str, *, short: str | None = None, **kwargs: Any) -> None:
        if not name.startswith("--"):
            name = f"--{name}"
        super().__init__(name=name, **kwargs)
        self.short = short

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        names = [self.name] if self.short is None else [self.short, self.name]
        kwargs = self._kwargs()
        if self.required:
            kwargs["required"] = True
        parser.add_argument(*names, dest=self.dest, **kwargs)


class Argument(Parameter):
    """A positional argument; ``many`` collects one or more values."""

    def __init__(self, name: str, *, many: bool = False, **kwargs: Any) -> None:
        super().__init__(name=name, required=True, **kwargs)
        self.many = many

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        kwargs = self._kwargs()
        kwargs.pop("default", None)
        if self.many:
            kwargs["nargs"] = "+"
        parser.add_argument(self.dest, metavar=self.name.upper(), **kwargs)
