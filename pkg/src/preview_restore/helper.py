# File: preview_restore/helper.py

"""Helper common functions for parameter lookup, list parsing and process exit."""

import os
import subprocess
from typing import List, Optional

from preview_restore.logging import logger


def exit_with_error(message: str, code: int = 1):
    """
    Log an error and leave the process with ``code``.

    Args:
        message (str): The error message to display.
        code (int): Process exit code (1 runtime failure, 2 usage/config error).
    """
    logger.log_message(message, level="warning")
    raise SystemExit(code)


def get_param_value(param_name: str, value: Optional[str] = None, default_value: Optional[str] = None,
                    required: bool = False) -> Optional[str]:
    """
    Resolve a parameter from an explicit value, the environment, or a default.

    The environment variable is ``PREVIEW_RESTORE_<PARAM_NAME>`` in upper case.

    Args:
        param_name (str): The name of the parameter.
        value (str, optional): Explicitly provided value; wins when set.
        default_value (str, optional): Fallback when neither value nor env var is set.
        required (bool): If True, raises an exception if the parameter is not found.
    Returns:
        str: The value of the parameter.
    Raises:
        RuntimeError: If the parameter is required and not found.
    """
    if not value:
        value = os.getenv(f"PREVIEW_RESTORE_{param_name.upper()}", default_value)

    if required and not value:
        logger.log_error(f"Required parameter '{param_name}' is missing.")

    return value


def parse_int_list(text: str) -> List[int]:
    """Parse ``"1, 2,4"`` into ``[1, 2, 4]``; an empty string gives ``[]``."""
    return [int(part) for part in (piece.strip() for piece in str(text).split(',')) if part]


def parse_float_list(text: str) -> List[float]:
    """Parse a comma separated list of floats."""
    return [float(part) for part in (piece.strip() for piece in str(text).split(',')) if part]


def describe_source_tree() -> str:
    """Return ``git describe`` output for the working tree, or ``"unknown"``."""
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            check=True, capture_output=True, text=True, timeout=5,
        )
        return completed.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"
