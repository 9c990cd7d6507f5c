"""Previewer distillation: low-rank adapters on the frozen denoiser learn one-step previews."""

from typing import Dict

import numpy as np

from preview_restore.bundle import RestorationNets, load_nets
from preview_restore.data import Batch, PairLoader
from preview_restore.diffusion import NoiseSchedule, add_noise
from preview_restore.logging import logger
from preview_restore.nets import adapter_parameters
from preview_restore.previewer import DistillBatch, distill_step, self_consistency, teacher_step
from preview_restore.tensor import Rng, Tensor, no_grad
from preview_restore.training.common import (
    TrainingResult,
    batch_tensors,
    find_resume_point,
    loss_window_mean,
    resume_nets,
    train_loop,
)
from preview_restore.validation import Validator

PHASE = "previewer"
FROZEN_GROUPS = ("denoiser_base", "encoder")


def distill_loss(nets: RestorationNets, batch: Batch, schedule: NoiseSchedule, grid: np.ndarray, config,
                 rng: Rng) -> Tensor:
    """
    Consistency loss between previews at a grid step ``s`` and at the teacher's next step ``t``.

    ``s`` is drawn from every grid entry but the last so each sample has a successor.
    """
    hq, lq = batch_tensors(batch)
    n = len(batch.class_ids)
    s = grid[rng.fork("s").integers(0, len(grid) - 1, size=n)]
    z_s = add_noise(hq, s, rng.fork("eps"), schedule).z_t
    with no_grad():
        c_s = nets.context(lq, s)
    z_t, t = teacher_step(nets, z_s, s, c_s, batch.class_ids, schedule, grid, cfg_scale=config.training.teacher_cfg)
    return distill_step(nets, DistillBatch(z_s=z_s, s=s, z_t=z_t, t=t, lq=lq), schedule)


def validation_consistency(nets: RestorationNets, val_batch: Batch, schedule: NoiseSchedule, grid: np.ndarray,
                           config) -> Dict[str, float]:
    """Self-consistency on a fixed validation batch with a fixed noise stream."""
    value = self_consistency(nets, Tensor(val_batch.lq), val_batch.class_ids, schedule, grid,
                             Rng(config.training.seed).fork("self_consistency"), cfg_scale=config.training.teacher_cfg)
    logger.log_debug(f"previewer self-consistency: {value:.5f}")
    return {"self_consistency": value}


@logger.log_function_entry_exit
def train_previewer(config, loader: PairLoader, val_batch: Batch, base_path: str, checkpoint_path: str,
                    loss_path: str) -> TrainingResult:
    """
    Attach adapters to the Stage I denoiser and distill them; the base model and
    compact encoder stay frozen and are checked unchanged afterwards.

    Raises:
        PhaseOrderError: ``base_path`` is not a finished Stage I checkpoint.
        CheckpointError: A frozen weight group changed.
    """
    validator = Validator(config)
    schedule = NoiseSchedule.from_config(config)
    grid = schedule.inference_grid(config.sampler.steps)
    steps = config.training.distill_steps
    start_step, optimizer_state = 0, None

    if find_resume_point(checkpoint_path, PHASE, steps) is not None:
        nets, meta, optimizer_state = resume_nets(checkpoint_path, config, PHASE)
        start_step = int(meta["step"])
        before = meta["digests"]
    else:
        nets, meta, _ = load_nets(base_path, config, allowed_phases=("base+dcp",))
        validator.verify_phase(meta, ("base+dcp",), base_path)
        before = nets.digests()
        nets.attach_previewer(config.nets.adapter_rank, config.nets.adapter_scale,
                              Rng(config.training.seed).fork("init").fork("adapter"))

    nets.freeze()
    params = adapter_parameters(nets.denoiser)
    for param in params:
        param.requires_grad = True
    logger.log_info(f"Previewer: {sum(p.data.size for p in params)} adapter parameters, steps {start_step}..{steps}")

    losses = train_loop(PHASE, nets, params, lambda batch, rng: distill_loss(nets, batch, schedule, grid, config, rng),
                        loader, steps, config, checkpoint_path, loss_path, start_step=start_step,
                        optimizer_state=optimizer_state,
                        evaluate=lambda: validation_consistency(nets, val_batch, schedule, grid, config))
    after = nets.digests()
    validator.verify_frozen(before, after, FROZEN_GROUPS)
    nets.phase = PHASE

    checks = losses["self_consistency"].dropna() if "self_consistency" in losses else []
    metrics = {"loss_first": loss_window_mean(losses, head=True), "loss_last": loss_window_mean(losses, head=False)}
    if len(checks):
        metrics.update(self_consistency_first=float(checks.iloc[0]), self_consistency_last=float(checks.iloc[-1]))
    return TrainingResult(nets=nets, losses=losses, checkpoint_path=checkpoint_path,
                          digests_before=before, digests_after=after, metrics=metrics)
