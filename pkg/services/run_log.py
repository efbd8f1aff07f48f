"""Run logging for solver and certificate runs.

Writes one JSON object per line to ``<out>/run.log`` so that stage records,
certificate outcomes and failures can be read back after the run.
"""

import json
import logging
import os
from datetime import UTC, datetime
from typing import Any

logger = logging.getLogger(__name__)

RUN_LOG_NAME = "run.log"


class RunLogger:
    """JSON-line log of the actions taken during one run."""

    def __init__(self, out_dir: str | None = None, resource: str | None = None):
        self.resource = resource
        self.path: str | None = None
        self._logger: logging.Logger | None = None
        if out_dir is not None:
            self.init_dir(out_dir)

    def init_dir(self, out_dir: str) -> None:
        """Attach a file handler writing to `out_dir`/run.log."""
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, RUN_LOG_NAME)

        # One logger per log file so parallel runs do not interleave
        run_logger = logging.getLogger(f"monomfg.run.{os.path.abspath(self.path)}")
        run_logger.setLevel(logging.INFO)
        run_logger.propagate = False

        handler = logging.FileHandler(self.path)
        handler.setLevel(logging.INFO)
        formatter = logging.Formatter(
            "%(asctime)s - %(levelname)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )
        handler.setFormatter(formatter)

        if not run_logger.handlers:
            run_logger.addHandler(handler)
        else:
            handler.close()

        self._logger = run_logger

    def log_action(
        self,
        action: str,
        details: dict[str, Any] | None = None,
        success: bool = True,
        error_message: str | None = None,
    ) -> None:
        """Log one action.

        Args:
            action: What happened (e.g. 'stage', 'solve', 'check')
            details: Additional JSON-serializable details
            success: Whether the action succeeded
            error_message: Error message if the action failed
        """
        if self._logger is None:
            return
        try:
            entry = {
                "timestamp": datetime.now(UTC).isoformat(),
                "action": action,
                "resource": self.resource,
                "success": success,
                "details": details or {},
            }
            if error_message:
                entry["error_message"] = error_message

            message = json.dumps(entry, separators=(",", ":"), default=str)
            if success:
                self._logger.info(message)
            else:
                self._logger.error(message)

        except Exception as e:
            # Logging must never abort a run
            logger.warning(f"Run logging failed: {e}")

    def close(self) -> None:
        if self._logger is None:
            return
        for handler in list(self._logger.handlers):
            handler.close()
            self._logger.removeHandler(handler)
        self._logger = None


def read_run_log(path: str, limit: int = 100) -> list[dict]:
    """Parse the most recent entries of a run log.

    Args:
        path: Path to a run.log file
        limit: Maximum number of entries to return

    Returns:
        List of log entries, newest first
    """
    if not os.path.exists(path):
        return []

    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        logger.warning(f"Failed to read run log {path}: {e}")
        return []

    entries = []
    for line in lines[-limit:]:
        try:
            # Format: "timestamp - level - json_data"
            parts = line.strip().split(" - ", 2)
            if len(parts) >= 3:
                entries.append(json.loads(parts[2]))
        except (json.JSONDecodeError, IndexError):
            continue

    return list(reversed(entries))
