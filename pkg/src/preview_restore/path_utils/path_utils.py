# File: preview_restore/path_utils/path_utils.py

import os

PHASE_FILES = {
    "base+dcp": "stage1",
    "previewer": "previewer",
    "aggregator": "aggregator",
}


def generate_manifest_path(work_dir):
    """
    Generate the path of the dataset manifest.

    Args:
        work_dir (str): The run's working directory.

    Returns:
        str: The manifest CSV path.
    """
    return os.path.join(work_dir, "data", "manifest.csv")


def _phase_stem(phase, variant):
    stem = PHASE_FILES[phase]
    return stem if variant in ("", "standard") else f"{stem}_{variant}"


def generate_checkpoint_path(work_dir, phase, variant=""):
    """
    Generate the checkpoint container path for a training phase.

    Args:
        work_dir (str): The run's working directory.
        phase (str): One of 'base+dcp', 'previewer', 'aggregator'.
        variant (str): Ablation tag kept in a separate file (e.g. 'image_only'); empty or
            'standard' for the main run.

    Returns:
        str: The IIRK container path; the metadata sidecar is this path plus '.json'.
    """
    return os.path.join(work_dir, "checkpoints", f"{_phase_stem(phase, variant)}.iirk")


def generate_loss_path(work_dir, phase, variant=""):
    """Generate the loss CSV path for a training phase."""
    return os.path.join(work_dir, "logs", f"{_phase_stem(phase, variant)}_loss.csv")


def generate_output_dir(work_dir, command, tag=""):
    """
    Generate the output folder of an evaluation command.

    Args:
        work_dir (str): The run's working directory.
        command (str): 'restore', 'analyze' or 'bench'.
        tag (str): Optional sub-folder such as the sampler mode or level.

    Returns:
        str: The output folder path.
    """
    return os.path.join(work_dir, command, tag) if tag else os.path.join(work_dir, command)


def generate_image_path(output_dir, index, kind):
    """Generate the PGM path for one image (kind is 'restored', 'lq' or 'hq')."""
    return os.path.join(output_dir, "images", f"{index:05d}_{kind}.pgm")


def generate_trajectory_path(output_dir, index):
    return os.path.join(output_dir, "trajectories", f"{index:05d}.csv")


def generate_run_log_path(work_dir):
    return os.path.join(work_dir, "run.log")


def generate_table_path(output_dir, name):
    """Generate the path of a result table (metrics, bench comparison) inside an output folder."""
    return os.path.join(output_dir, f"{name}.csv")
