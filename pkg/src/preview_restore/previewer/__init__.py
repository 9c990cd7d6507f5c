# File: preview_restore/previewer/__init__.py

from .previewer import (
    DistillBatch,
    distill_step,
    preview,
    run_preview,
    self_consistency,
    teacher_eps,
    teacher_step,
)
