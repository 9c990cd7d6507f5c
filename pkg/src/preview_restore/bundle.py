"""The restoration networks as one unit: construction, checkpoints and frozen-weight digests."""

from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from preview_restore.aggregator import AggregatorNet
from preview_restore.errors import CheckpointError, PhaseOrderError
from preview_restore.logging import logger
from preview_restore.nets import CompactEncoder, DenoiserNet, Module, adapters_of, attach_adapters
from preview_restore.storage import read_checkpoint, write_checkpoint
from preview_restore.tensor import Rng, Tensor

PHASES = ("base+dcp", "previewer", "aggregator")
OPTIMIZER_PREFIX = "optimizer/"


def checkpoint_variant(config, phase: str) -> str:
    """Ablation tag recorded in the sidecar: ``image_only`` Stage I, ``noisy_preview`` Stage II or ``standard``."""
    if phase == "base+dcp" and not config.training.dcp_text:
        return "image_only"
    if phase == "aggregator" and config.training.noisy_preview:
        return "noisy_preview"
    return "standard"


def _is_base_parameter(name: str) -> bool:
    return ".adapter." not in name


@dataclass
class RestorationNets:
    """Denoiser + compact encoder, with the previewer adapters and aggregator once trained."""

    denoiser: DenoiserNet
    encoder: CompactEncoder
    aggregator: Optional[AggregatorNet] = None
    phase: str = "init"

    @property
    def null_class(self) -> int:
        return self.denoiser.null_class

    @property
    def image_size(self) -> int:
        return self.denoiser.image_size

    @property
    def has_previewer(self) -> bool:
        return bool(adapters_of(self.denoiser))

    def context(self, lq: Tensor, t) -> Tensor:
        """Compact LQ context tokens ``c_lq`` at step ``t``."""
        return self.encoder(lq, t)

    def attach_previewer(self, rank: int, scale: float, rng: Rng):
        attach_adapters(self.denoiser, rank, scale, rng)

    def attach_aggregator(self, rng: Rng) -> AggregatorNet:
        self.aggregator = AggregatorNet(self.denoiser, rng)
        return self.aggregator

    def components(self) -> Dict[str, Module]:
        parts = {"denoiser": self.denoiser, "encoder": self.encoder}
        if self.aggregator is not None:
            parts["aggregator"] = self.aggregator
        return parts

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for prefix, module in self.components().items():
            state.update(module.state_dict(prefix))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for prefix, module in self.components().items():
            module.load_state_dict({k: v for k, v in state.items() if k.startswith(prefix + ".")}, prefix=prefix)
        stray = [k for k in state if k.split(".", 1)[0] not in self.components()]
        if stray:
            raise CheckpointError(f"Checkpoint holds parameters of absent components: {stray[:5]}")

    def digests(self) -> Dict[str, str]:
        """Digest per frozen-weight group: base denoiser, encoder, adapters, aggregator."""
        digests = {
            "denoiser_base": self.denoiser.parameter_digest(_is_base_parameter),
            "encoder": self.encoder.parameter_digest(),
        }
        if self.has_previewer:
            digests["adapters"] = self.denoiser.parameter_digest(lambda name: not _is_base_parameter(name))
        if self.aggregator is not None:
            digests["aggregator"] = self.aggregator.parameter_digest()
        return digests

    def freeze(self):
        for module in self.components().values():
            module.freeze()


def build_nets(config, rng: Optional[Rng] = None) -> RestorationNets:
    """Fresh denoiser and compact encoder from the ``nets`` section of a ``RunConfig``."""
    nets_cfg = config.nets
    rng = rng or Rng(config.training.seed).fork("init")
    denoiser = DenoiserNet(
        image_size=nets_cfg.image_size,
        channels=nets_cfg.channels,
        time_dim=nets_cfg.time_dim,
        num_classes=nets_cfg.num_classes,
        class_tokens=nets_cfg.class_tokens,
        context_width=nets_cfg.context_width,
        heads=nets_cfg.heads,
        self_attn_levels=config.self_attn_levels,
        lq_weights=config.lq_weights,
        rng=rng.fork("denoiser"),
    )
    encoder = CompactEncoder(
        image_size=nets_cfg.image_size,
        patch=nets_cfg.patch_size,
        width=nets_cfg.context_width,
        tokens=nets_cfg.context_tokens,
        layers=nets_cfg.encoder_layers,
        resampler_layers=nets_cfg.resampler_layers,
        heads=nets_cfg.heads,
        time_dim=nets_cfg.time_dim,
        rng=rng.fork("encoder"),
    )
    return RestorationNets(denoiser=denoiser, encoder=encoder)


def save_nets(path: str, nets: RestorationNets, phase: str, config, step: int, complete: bool = True,
              optimizer=None, extra: Optional[Dict] = None):
    """Write every parameter (and optimizer state) plus the phase sidecar."""
    if phase not in PHASES:
        raise CheckpointError(f"Unknown phase '{phase}'. Allowed: {list(PHASES)}")
    tensors = nets.state_dict()
    if optimizer is not None:
        tensors.update({OPTIMIZER_PREFIX + key: value for key, value in optimizer.state_dict().items()})
    meta = {
        "phase": phase,
        "config_hash": config.config_hash,
        "digests": nets.digests(),
        "step": int(step),
        "complete": bool(complete),
        "variant": checkpoint_variant(config, phase),
    }
    meta.update(extra or {})
    write_checkpoint(path, tensors, meta)
    logger.log_debug(f"Saved {phase} checkpoint at step {step} to {path}")


def load_nets(path: str, config, allowed_phases: Iterable[str] = PHASES,
              rng: Optional[Rng] = None) -> Tuple[RestorationNets, Dict, Dict[str, np.ndarray]]:
    """
    Rebuild the networks a checkpoint was written from and load its weights.

    Returns:
        (nets, sidecar metadata, optimizer state entries).

    Raises:
        CheckpointError: Unreadable container or parameter mismatch.
    """
    allowed_phases = tuple(allowed_phases)
    tensors, meta = read_checkpoint(path)
    phase = meta.get("phase")
    if phase not in PHASES:
        raise CheckpointError(f"Checkpoint '{path}' carries unknown phase '{phase}'")
    if phase not in allowed_phases:
        raise PhaseOrderError(f"Checkpoint '{path}' is phase '{phase}', expected one of {list(allowed_phases)}")
    if meta.get("config_hash") != config.config_hash:
        logger.log_warning(f"Checkpoint '{path}' was written under config {meta.get('config_hash', '?')[:12]}, "
                           f"current config is {config.config_hash[:12]}")
    rng = rng or Rng(config.training.seed).fork("init")
    nets = build_nets(config, rng)
    if PHASES.index(phase) >= PHASES.index("previewer"):
        nets.attach_previewer(config.nets.adapter_rank, config.nets.adapter_scale, rng.fork("adapter"))
    if phase == "aggregator":
        nets.attach_aggregator(rng.fork("aggregator"))
    weights = {k: v for k, v in tensors.items() if not k.startswith(OPTIMIZER_PREFIX)}
    optimizer_state = {k[len(OPTIMIZER_PREFIX):]: v for k, v in tensors.items() if k.startswith(OPTIMIZER_PREFIX)}
    nets.load_state_dict(weights)
    nets.phase = phase
    return nets, meta, optimizer_state
