"""Stage I: the class- and LQ-conditioned denoiser with its compact encoder."""

from typing import Optional

from preview_restore.bundle import RestorationNets, build_nets
from preview_restore.data import Batch, PairLoader
from preview_restore.diffusion import NoiseSchedule, add_noise, diffusion_loss
from preview_restore.logging import logger
from preview_restore.tensor import Rng, Tensor
from preview_restore.training.common import (
    TrainingResult,
    batch_tensors,
    condition_dropout,
    find_resume_point,
    loss_window_mean,
    resume_nets,
    train_loop,
)

PHASE = "base+dcp"


def stage1_loss(nets: RestorationNets, batch: Batch, schedule: NoiseSchedule, config, rng: Rng) -> Tensor:
    """
    Noise-prediction loss at ``t ~ U[1, T]`` with LQ-context and class dropout.

    The dropped LQ context is multiplied by a per-sample zero mask, so a dropout
    probability of 1 leaves the compact encoder without gradient.
    """
    hq, lq = batch_tensors(batch)
    n = len(batch.class_ids)
    t = rng.fork("t").integers(1, schedule.T + 1, size=n)
    sample = add_noise(hq, t, rng.fork("eps"), schedule)
    c_lq, classes = condition_dropout(nets.context(lq, t), batch.class_ids, nets.null_class, config, rng)
    eps_pred = nets.denoiser(sample.z_t, t, classes, c_lq)
    return diffusion_loss(eps_pred, sample.eps)


@logger.log_function_entry_exit
def train_stage1(config, loader: PairLoader, checkpoint_path: str, loss_path: str,
                 nets: Optional[RestorationNets] = None) -> TrainingResult:
    """
    Train denoiser and compact encoder jointly from scratch (or resume an unfinished run).

    Returns:
        TrainingResult: Trained nets, the per-step loss table and the checkpoint path.
    """
    schedule = NoiseSchedule.from_config(config)
    steps = config.training.stage1_steps
    start_step, optimizer_state = 0, None
    meta = find_resume_point(checkpoint_path, PHASE, steps)
    if meta is not None:
        nets, meta, optimizer_state = resume_nets(checkpoint_path, config, PHASE)
        start_step = int(meta["step"])
    if nets is None:
        nets = build_nets(config)
    nets.denoiser.unfreeze()
    nets.encoder.unfreeze()
    params = nets.denoiser.trainable_parameters() + nets.encoder.trainable_parameters()
    logger.log_info(f"Stage I: {sum(p.data.size for p in params)} trainable parameters, "
                    f"steps {start_step}..{steps}")

    losses = train_loop(PHASE, nets, params, lambda batch, rng: stage1_loss(nets, batch, schedule, config, rng),
                        loader, steps, config, checkpoint_path, loss_path, start_step=start_step,
                        optimizer_state=optimizer_state)
    nets.phase = PHASE
    first, last = loss_window_mean(losses, head=True), loss_window_mean(losses, head=False)
    return TrainingResult(nets=nets, losses=losses, checkpoint_path=checkpoint_path,
                          digests_after=nets.digests(), metrics={"loss_first": first, "loss_last": last})
