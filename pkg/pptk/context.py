from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any, Generic, TypeVar

import numpy as np

from .utils import make_rng

if TYPE_CHECKING:
    from typing_extensions import TypeVar

    from .app import Application
    from .commands import Command
    from .config import RunConfig
    from .state import State

    AppT = TypeVar("AppT", bound=Application, default=Application)
else:
    AppT = TypeVar("AppT")

__all__ = ("Context",)

log = logging.getLogger(__name__)


class Context(Generic[AppT]):
    """Everything one command invocation sees: parsed arguments, resolved config and the app state."""

    def __init__(self, args: argparse.Namespace, config: RunConfig, state: State, command: Command) -> None:
        self._args = args
        self._config = config
        self._state = state
        self._command = command

    @property
    def app(self) -> AppT:
        return self._state.app  # type: ignore

    @property
    def args(self) -> argparse.Namespace:
        return self._args

    @property
    def config(self) -> RunConfig:
        return self._config

    @property
    def command(self) -> Command:
        return self._command

    def rng(self) -> np.random.Generator:
        return make_rng(self._config.seed)

    def encode(self, obj: Any) -> bytes:
        return self._state.encoder(obj)

    def write(self, path: str | Path | None, data: bytes) -> None:
        """Writes ``data`` to ``path``, or to stdout when no path is given."""

        if path is None:
            if hasattr(sys.stdout, "buffer"):
                sys.stdout.buffer.write(data)
            else:
                sys.stdout.write(data.decode())
            sys.stdout.flush()
            return
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        log.info("Wrote %d bytes to %s", len(data), path)

    def emit(self, obj: Any, *, kind: str = "json", out: str | Path | None = None) -> None:
        self.write(out, self._state.formatter(obj, kind))

    def echo(self, text: str) -> None:
        print(text, file=sys.stdout)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} command={self._command.name!r} seed={self._config.seed}>"
