import numpy as np
import pytest

from preview_restore.bundle import build_nets
from preview_restore.config import RunConfig
from preview_restore.data import make_pair
from preview_restore.diffusion import NoiseSchedule
from preview_restore.nets import adapter_parameters
from preview_restore.tensor import Rng

TINY_OVERRIDES = [
    "nets.channels=4",
    "nets.time_dim=8",
    "nets.class_tokens=2",
    "nets.context_tokens=2",
    "nets.context_width=8",
    "nets.encoder_layers=1",
    "nets.resampler_layers=1",
    "nets.adapter_rank=2",
    "training.batch_size=2",
    "training.stage1_steps=2",
    "training.distill_steps=2",
    "training.stage2_steps=2",
    "training.checkpoint_every=1",
    "training.workers=1",
    "training.progress=false",
    "training.log_every=1",
    "sampler.steps=4",
    "sampler.eta_cutoff=1",
    "sampler.cfg_scale=2.0",
    "data.train_size=8",
    "data.val_size=2",
    "data.test_size=2",
]


def perturb(params, seed, scale=0.05):
    """Move parameters off their initial values (zero-initialised heads included)."""
    stream = Rng(seed)
    for index, param in enumerate(params):
        param.data = param.data + (stream.fork(index).normal(param.shape) * scale).astype(param.dtype)


def gradient_error(loss_fn, tensors, h=1e-3, max_entries=12, seed=0):
    """
    Norm-wise relative error between backprop and central differences over (a sample of)
    the entries of ``tensors``. ``loss_fn`` must rebuild the graph on every call.
    """
    for tensor in tensors:
        tensor.grad = None
    loss_fn().backward()
    analytic, numeric = [], []
    stream = np.random.default_rng(seed)
    for tensor in tensors:
        flat = tensor.data.reshape(-1)
        entries = np.arange(flat.size)
        if flat.size > max_entries:
            entries = stream.choice(flat.size, size=max_entries, replace=False)
        grad = np.zeros_like(flat) if tensor.grad is None else tensor.grad.reshape(-1)
        for entry in entries:
            original = flat[entry]
            flat[entry] = original + h
            plus = loss_fn().item()
            flat[entry] = original - h
            minus = loss_fn().item()
            flat[entry] = original
            numeric.append((plus - minus) / (2 * h))
            analytic.append(grad[entry])
    analytic, numeric = np.array(analytic), np.array(numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


@pytest.fixture
def gradcheck():
    return gradient_error


@pytest.fixture
def tiny_config(tmp_path):
    return RunConfig.load(overrides=TINY_OVERRIDES + [f"paths.work_dir={tmp_path / 'run'}"])


@pytest.fixture
def schedule(tiny_config):
    return NoiseSchedule.from_config(tiny_config)


@pytest.fixture
def tiny_nets(tiny_config):
    return build_nets(tiny_config)


@pytest.fixture
def full_nets(tiny_config):
    """Denoiser, encoder, non-trivial previewer adapters and a non-trivial aggregator."""
    nets = build_nets(tiny_config)
    nets.attach_previewer(tiny_config.nets.adapter_rank, tiny_config.nets.adapter_scale, Rng(1).fork("adapter"))
    perturb(adapter_parameters(nets.denoiser), seed=2)
    nets.attach_aggregator(Rng(3))
    perturb(nets.aggregator.parameters(), seed=4)
    return nets


@pytest.fixture
def lq_batch():
    """Two LQ images (down4 level) with their HQ references and classes."""
    pairs = [make_pair(seed, class_id, "down4") for seed, class_id in ((11, 0), (12, 2))]
    lq = np.stack([pair.lq for pair in pairs])[:, None]
    hq = np.stack([pair.hq for pair in pairs])[:, None]
    return lq, hq, np.array([pair.class_id for pair in pairs])
