import os
from typing import Dict, Iterable, Optional

import numpy as np

from preview_restore.bundle import PHASES
from preview_restore.config import RunConfig
from preview_restore.errors import CheckpointError, ConfigError, PhaseOrderError, ShapeError
from preview_restore.logging.logger import Logger


class Validator:
    """
    Pre-flight and post-phase checks: manifest presence, writable outputs, checkpoint
    phase ordering, frozen-weight digests and input resolution.
    """

    def __init__(self, config: RunConfig, logger: Optional[Logger] = None):
        """
        Initialize the Validator with configuration and logger.

        Args:
            config (RunConfig): Resolved run configuration.
            logger (Logger, optional): Logger instance; the config's logger by default.
        """
        self.config = config
        self.logger = logger or config.logger

    def verify_writable(self, path: str) -> str:
        """
        Create ``path`` (a directory) if needed and check it accepts files.

        Raises:
            ConfigError: The directory cannot be created or written.
        """
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"Output directory '{path}' cannot be created: {e}") from e
        if not os.access(path, os.W_OK):
            raise ConfigError(f"Output directory '{path}' is not writable")
        self.logger.log_debug(f"Verified writable directory: {path}")
        return path

    def verify_manifest(self, path: str) -> str:
        """The dataset manifest must exist before any training phase."""
        if not os.path.isfile(path):
            raise PhaseOrderError(f"Dataset manifest '{path}' not found; run gen-data first")
        return path

    def verify_phase(self, meta: Dict, expected: Iterable[str], path: str) -> str:
        """
        Check a checkpoint's phase tag and completeness against the phases a command accepts.

        Raises:
            PhaseOrderError: Wrong or unfinished phase.
        """
        expected = tuple(expected)
        phase = meta.get("phase")
        if phase not in PHASES:
            raise CheckpointError(f"Checkpoint '{path}' carries unknown phase '{phase}'")
        if phase not in expected:
            raise PhaseOrderError(f"Checkpoint '{path}' is phase '{phase}'; this step needs {list(expected)}")
        if not meta.get("complete", True):
            raise PhaseOrderError(f"Checkpoint '{path}' ({phase}) is unfinished at step {meta.get('step')}")
        self.logger.log_block("Checkpoint Validation", [
            f"Path: {path}",
            f"Phase: {phase}",
            f"Step: {meta.get('step')}",
            f"Config Hash: {meta.get('config_hash', '?')[:12]}",
        ], level="debug")
        return phase

    def verify_frozen(self, before: Dict[str, str], after: Dict[str, str], keys: Iterable[str]):
        """
        Frozen weight groups must keep their digests across a training phase.

        Raises:
            CheckpointError: A frozen group changed.
        """
        changed = [key for key in keys if before.get(key) != after.get(key)]
        if changed:
            raise CheckpointError(f"Frozen parameters changed during training: {changed}")
        self.logger.log_debug(f"Frozen digests unchanged: {sorted(keys)}")

    def verify_resolution(self, images: np.ndarray) -> np.ndarray:
        """
        Inputs must be square images at the model resolution.

        Raises:
            ShapeError: Any other extent.
        """
        size = self.config.nets.image_size
        images = np.asarray(images)
        if images.ndim < 2 or images.shape[-2:] != (size, size):
            raise ShapeError(f"Input images {images.shape} do not match the model resolution {size}x{size}")
        return images
