# File: preview_restore/training/__init__.py

from .common import TrainingResult, condition_dropout, loss_window_mean, make_optimizer, train_loop
from .stage1 import stage1_loss, train_stage1
from .distill import distill_loss, train_previewer, validation_consistency
from .stage2 import stage2_loss, train_aggregator
