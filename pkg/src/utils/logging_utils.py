import logging

from rich.console import Console
from rich.logging import RichHandler

LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

stderr_console = Console(stderr=True)


def configure_logging(level: str = "warn") -> None:
    """Route every logger to stderr through rich; stdout stays JSON-only."""
    root = logging.getLogger()
    root.setLevel(LEVELS.get(level.lower(), logging.WARNING))
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        root.addHandler(
            RichHandler(console=stderr_console, show_path=False, rich_tracebacks=True)
        )
