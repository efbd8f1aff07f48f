"""Core package for monomfg: CLI entry point, environment config, exit codes.

Exposes `configure_logging`, used by the CLI and by tests that want the
console format.
"""

import logging

from .config import get_config

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str | None = None, quiet: bool = False) -> None:
    """Attach one console handler to the `services` loggers.

    Args:
        level: Log level name; defaults to MFG_LOG_LEVEL.
        quiet: Raise the level to WARNING regardless of `level`.
    """
    name = "WARNING" if quiet else (level or get_config().LOG_LEVEL)
    root = logging.getLogger("services")
    root.setLevel(getattr(logging, name.upper(), logging.INFO))

    if not any(getattr(h, "_monomfg", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        handler._monomfg = True  # type: ignore[attr-defined]
        root.addHandler(handler)
