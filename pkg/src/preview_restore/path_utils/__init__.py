# File: preview_restore/path_utils/__init__.py

from .path_utils import (
    PHASE_FILES,
    generate_manifest_path,
    generate_checkpoint_path,
    generate_loss_path,
    generate_output_dir,
    generate_image_path,
    generate_trajectory_path,
    generate_run_log_path,
    generate_table_path,
)
