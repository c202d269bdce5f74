"""Route stdlib logging through rich on stderr."""

from __future__ import annotations

import logging
from typing import Final

from rich.logging import RichHandler

from .console import cerr

LEVELS: Final = {-1: logging.WARNING, 0: logging.INFO, 1: logging.DEBUG}


def setup_logging(verbosity: int = 0) -> None:
    """Install a single `RichHandler` on the root logger (`-q` = -1, `-v` = 1)."""
    level = LEVELS[max(-1, min(1, verbosity))]
    handler = RichHandler(console=cerr, show_path=False, markup=False, rich_tracebacks=True)
    logging.basicConfig(level=level, format="%(name)s: %(message)s", datefmt="[%X]", handlers=[handler], force=True)
