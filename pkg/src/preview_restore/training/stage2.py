"""Stage II: the aggregator learns residuals from (preview, LQ) with everything else frozen."""

import numpy as np

from preview_restore.aggregator import noisy_preview_variant
from preview_restore.bundle import RestorationNets, load_nets
from preview_restore.data import Batch, PairLoader
from preview_restore.diffusion import NoiseSchedule, add_noise, diffusion_loss
from preview_restore.logging import logger
from preview_restore.nets import adapter_scope
from preview_restore.previewer import run_preview
from preview_restore.tensor import Rng, Tensor, no_grad
from preview_restore.training.common import (
    TrainingResult,
    batch_tensors,
    condition_dropout,
    find_resume_point,
    loss_window_mean,
    resume_nets,
    train_loop,
)
from preview_restore.validation import Validator

PHASE = "aggregator"
FROZEN_GROUPS = ("denoiser_base", "encoder", "adapters")


def stage2_loss(nets: RestorationNets, batch: Batch, schedule: NoiseSchedule, grid: np.ndarray, config,
                rng: Rng) -> Tensor:
    """
    Noise-prediction loss of the base denoiser with aggregator residuals at ``delta = 1``.

    Previews are computed without gradient from the full LQ context; the denoiser sees
    the dropped-out context and class so the guidance branch also learns to use residuals.
    """
    hq, lq = batch_tensors(batch)
    n = len(batch.class_ids)
    t = grid[rng.fork("t").integers(0, len(grid), size=n)]
    sample = add_noise(hq, t, rng.fork("eps"), schedule)
    with no_grad():
        c_lq = nets.context(lq, t)
        reference = run_preview(nets, sample.z_t, t, c_lq, schedule).detach()
        if config.training.noisy_preview:
            reference = noisy_preview_variant(reference, t, schedule, rng.fork("noisy_preview")).detach()
    c_cond, classes = condition_dropout(c_lq, batch.class_ids, nets.null_class, config, rng)
    residuals = nets.aggregator(reference, lq, t)
    with adapter_scope(nets.denoiser, False):
        eps_pred = nets.denoiser(sample.z_t, t, classes, c_cond, residuals=residuals, delta=1.0)
    return diffusion_loss(eps_pred, sample.eps)


@logger.log_function_entry_exit
def train_aggregator(config, loader: PairLoader, previewer_path: str, checkpoint_path: str,
                     loss_path: str) -> TrainingResult:
    """
    Build the aggregator from the distilled checkpoint's denoiser and train it alone.

    Raises:
        PhaseOrderError: ``previewer_path`` is not a finished previewer checkpoint.
        CheckpointError: Denoiser, encoder or adapter weights changed.
    """
    validator = Validator(config)
    schedule = NoiseSchedule.from_config(config)
    grid = schedule.inference_grid(config.sampler.steps)
    steps = config.training.stage2_steps
    start_step, optimizer_state = 0, None

    if find_resume_point(checkpoint_path, PHASE, steps) is not None:
        nets, meta, optimizer_state = resume_nets(checkpoint_path, config, PHASE)
        start_step = int(meta["step"])
        before = meta["digests"]
    else:
        nets, meta, _ = load_nets(previewer_path, config, allowed_phases=("previewer",))
        validator.verify_phase(meta, ("previewer",), previewer_path)
        before = nets.digests()
        nets.attach_aggregator(Rng(config.training.seed).fork("init").fork("aggregator"))

    nets.denoiser.freeze()
    nets.encoder.freeze()
    nets.aggregator.unfreeze()
    params = nets.aggregator.trainable_parameters()
    variant = "noisy preview" if config.training.noisy_preview else "clean preview"
    logger.log_info(f"Stage II ({variant}): {sum(p.data.size for p in params)} aggregator parameters, "
                    f"steps {start_step}..{steps}")

    losses = train_loop(PHASE, nets, params, lambda batch, rng: stage2_loss(nets, batch, schedule, grid, config, rng),
                        loader, steps, config, checkpoint_path, loss_path, start_step=start_step,
                        optimizer_state=optimizer_state)
    after = nets.digests()
    validator.verify_frozen(before, after, FROZEN_GROUPS)
    nets.phase = PHASE
    return TrainingResult(nets=nets, losses=losses, checkpoint_path=checkpoint_path,
                          digests_before=before, digests_after=after,
                          metrics={"loss_first": loss_window_mean(losses, head=True),
                                   "loss_last": loss_window_mean(losses, head=False)})
