"""Shared training loop: optimizer, condition dropout, resumable checkpoints and loss tables."""

import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from preview_restore.bundle import RestorationNets, load_nets, save_nets
from preview_restore.data import Batch, PairLoader
from preview_restore.errors import NonFiniteError, RestoreError
from preview_restore.logging import logger
from preview_restore.nets import Parameter
from preview_restore.storage import read_checkpoint_meta, read_table, write_table
from preview_restore.tensor import AdamW, OptimizerConfig, Rng, Tensor


@dataclass
class TrainingResult:
    nets: RestorationNets
    losses: pd.DataFrame
    checkpoint_path: Optional[str] = None
    digests_before: Dict[str, str] = field(default_factory=dict)
    digests_after: Dict[str, str] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)


def make_optimizer(params: List[Parameter], config) -> AdamW:
    training = config.training
    return AdamW(params, OptimizerConfig(lr=training.lr, betas=(training.beta1, training.beta2),
                                         weight_decay=training.weight_decay))


def progress(iterable, total: int, desc: str, config):
    """tqdm bar, silent when disabled in config or when stderr is not a terminal."""
    disable = not config.training.progress or not sys.stderr.isatty()
    return tqdm(iterable, total=total, desc=desc, disable=disable, leave=False)


def condition_dropout(c_lq: Tensor, class_ids: np.ndarray, null_class: int, config, rng: Rng):
    """
    Zero ``c_lq`` and replace the class by the null class per sample, with the configured
    probabilities (trains the unconditional guidance branch). Image-only runs
    (``training.dcp_text = false``) drop every class.
    """
    n = len(class_ids)
    class_dropout = config.training.class_dropout if config.training.dcp_text else 1.0
    keep = ~rng.fork("lq_dropout").bernoulli(config.training.lq_dropout, n)
    dropped_class = rng.fork("class_dropout").bernoulli(class_dropout, n)
    if not keep.all():
        c_lq = c_lq * Tensor(keep.reshape(n, 1, 1).astype(np.float64), dtype=c_lq.dtype)
    classes = np.where(dropped_class, null_class, class_ids)
    return c_lq, classes


def batch_tensors(batch: Batch):
    return Tensor(batch.hq), Tensor(batch.lq)


def find_resume_point(checkpoint_path: str, phase: str, steps: int) -> Optional[Dict]:
    """Sidecar metadata of an unfinished checkpoint of ``phase`` that can be resumed, else None."""
    if not os.path.exists(f"{checkpoint_path}.json"):
        return None
    meta = read_checkpoint_meta(checkpoint_path)
    if meta.get("phase") != phase or meta.get("complete", True) or int(meta.get("step", 0)) >= steps:
        return None
    return meta


def resume_nets(checkpoint_path: str, config, phase: str):
    logger.log_info(f"Resuming {phase} from {checkpoint_path}")
    return load_nets(checkpoint_path, config, allowed_phases=(phase,))


def train_loop(phase: str, nets: RestorationNets, params: List[Parameter],
               loss_fn: Callable[[Batch, Rng], Tensor], loader: PairLoader, steps: int, config,
               checkpoint_path: str, loss_path: str, start_step: int = 0,
               optimizer_state: Optional[Dict[str, np.ndarray]] = None,
               evaluate: Optional[Callable[[], Dict[str, float]]] = None,
               extra_meta: Optional[Dict] = None) -> pd.DataFrame:
    """
    Optimise ``params`` for ``steps`` steps of ``loss_fn``.

    Step ``k`` always sees batch ``k`` and the counter stream ``(seed, phase, k)``, so a run
    resumed from a checkpoint at step ``k`` continues exactly where the original stopped.
    ``evaluate`` (optional) runs at the start, at each checkpoint and at the end; its values
    land in extra loss-table columns.

    Raises:
        RestoreError: The loss became non-finite.
    """
    optimizer = make_optimizer(params, config)
    if optimizer_state:
        optimizer.load_state_dict(optimizer_state)
    rows: List[Dict[str, float]] = []
    if start_step and os.path.exists(loss_path):
        previous = read_table(loss_path)
        rows = previous[previous["step"] < start_step].to_dict("records")

    step_stream = Rng(config.training.seed).fork(phase)
    every = max(1, config.training.checkpoint_every)
    pending_eval = evaluate() if evaluate is not None and start_step == 0 else {}

    iterator = progress(loader.iterate(start_step, steps), total=steps - start_step, desc=phase, config=config)
    for step, batch in iterator:
        optimizer.zero_grad()
        try:
            loss = loss_fn(batch, step_stream.fork(step))
            if not np.isfinite(loss.item()):
                raise NonFiniteError(f"loss is {loss.item()}")
            loss.backward()
        except NonFiniteError as e:
            logger.log_error(f"{phase}: loss diverged at step {step}: {e}", exc_type=RestoreError)
        optimizer.step()
        row = {"step": step, "loss": loss.item()}
        row.update(pending_eval)
        pending_eval = {}
        rows.append(row)
        if step % max(1, config.training.log_every) == 0:
            logger.log_debug(f"{phase} step {step}: loss {row['loss']:.5f}")
        done = step + 1
        if done % every == 0 or done == steps:
            if evaluate is not None:
                rows[-1].update(evaluate())
            save_nets(checkpoint_path, nets, phase, config, done, complete=done == steps,
                      optimizer=optimizer, extra=extra_meta)
            write_table(pd.DataFrame(rows), loss_path)

    frame = pd.DataFrame(rows)
    if steps == start_step:
        save_nets(checkpoint_path, nets, phase, config, steps, complete=True, optimizer=optimizer, extra=extra_meta)
    logger.log_frame_summary(frame[["loss"]] if not frame.empty else frame, f"{phase} loss")
    return frame


def loss_window_mean(losses: pd.DataFrame, head: bool, window: int = 50) -> float:
    """Mean loss over the first (``head``) or last ``window`` logged steps."""
    if losses.empty:
        return float("nan")
    values = losses["loss"].to_numpy()
    return float(np.mean(values[:window] if head else values[-window:]))
