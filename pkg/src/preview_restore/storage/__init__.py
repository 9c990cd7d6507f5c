# File: preview_restore/storage/__init__.py

from .writer import (
    CONTAINER_MAGIC,
    CONTAINER_VERSION,
    append_run_log,
    ensure_parent_exists,
    write_checkpoint,
    write_container,
    write_pgm,
    write_table,
)
from .reader import read_checkpoint, read_checkpoint_meta, read_container, read_pgm, read_table
