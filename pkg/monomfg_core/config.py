"""Environment-level configuration."""

import os
from collections.abc import Mapping

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class BaseConfig:
    """Settings read from the environment when instantiated."""

    def __init__(self, environ: Mapping[str, str] | None = None):
        env = os.environ if environ is None else environ
        # Worker cap for sweeps
        self.THREADS = _parse_int(env.get("MFG_THREADS", "1"), "MFG_THREADS")
        self.LOG_LEVEL = env.get("MFG_LOG_LEVEL", "INFO").strip().upper()
        self.OUTPUT_DIR = env.get("MFG_OUTPUT_DIR", "runs")

    def validate(self) -> None:
        """Raise if a setting cannot be used."""
        if self.THREADS < 1:
            raise ValueError(
                f"MFG_THREADS must be a positive integer, got {self.THREADS}"
            )
        if self.LOG_LEVEL not in LOG_LEVELS:
            raise ValueError(
                f"MFG_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, "
                f"got '{self.LOG_LEVEL}'"
            )


def _parse_int(val: str, name: str) -> int:
    try:
        return int(str(val).strip())
    except ValueError as e:
        raise ValueError(f"{name} must be an integer, got '{val}'") from e


def get_config(environ: Mapping[str, str] | None = None) -> BaseConfig:
    """Return the validated configuration for the current environment."""
    config = BaseConfig(environ)
    config.validate()
    return config
