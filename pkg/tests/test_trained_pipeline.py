import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import pytest

from preview_restore.bundle import RestorationNets, load_nets
from preview_restore.config import RunConfig
from preview_restore.data import PairLoader, build_manifest, pair_from_row, select_split
from preview_restore.diffusion import NoiseSchedule, noise_to
from preview_restore.path_utils import generate_checkpoint_path, generate_loss_path
from preview_restore.previewer import run_preview, self_consistency
from preview_restore.quality import delta_ordering_fraction, psnr, reference_row_report, trajectory_report
from preview_restore.sampling import (
    SamplerConfig,
    adares_sample,
    creative_sample,
    ddim_sample,
    reference_row,
    restore_rows,
)
from preview_restore.sampling import sampler as sampler_module
from preview_restore.tensor import Rng, Tensor, no_grad
from preview_restore.training import TrainingResult, train_aggregator, train_previewer, train_stage1

SMOKE_CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "smoke.ini")
IMAGES_PER_LEVEL = 64

pytestmark = pytest.mark.slow


@dataclass
class SmokeRun:
    config: RunConfig
    manifest: pd.DataFrame
    train: PairLoader
    stage1: TrainingResult
    distilled: TrainingResult
    aggregated: TrainingResult

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_config(self.config)

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig.from_run_config(self.config)

    def level_rows(self, level: str, limit: int = IMAGES_PER_LEVEL) -> pd.DataFrame:
        return select_split(self.manifest, "test", level).head(limit)


def images_of(rows):
    pairs = [pair_from_row(row) for _, row in rows.iterrows()]
    lq = np.stack([pair.lq for pair in pairs])[:, None]
    hq = np.stack([pair.hq for pair in pairs])[:, None]
    return lq, hq, np.array([pair.class_id for pair in pairs]), rows["index"].to_numpy()


def downsample(images, factor=4):
    n, _, h, w = images.shape
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    work_dir = str(tmp_path_factory.mktemp("smoke"))
    config = RunConfig.load(SMOKE_CONFIG, [f"paths.work_dir={work_dir}", "training.progress=false",
                                           f"data.test_size={IMAGES_PER_LEVEL}"])
    manifest = build_manifest(config)
    train = PairLoader(select_split(manifest, "train"), config.training.batch_size, config.training.seed,
                       workers=config.training.workers)
    val = PairLoader(select_split(manifest, "val"), config.training.batch_size, config.training.seed, workers=1)
    stage1 = train_stage1(config, train, generate_checkpoint_path(work_dir, "base+dcp"),
                          generate_loss_path(work_dir, "base+dcp"))
    distilled = train_previewer(config, train, val.ordered(), stage1.checkpoint_path,
                                generate_checkpoint_path(work_dir, "previewer"),
                                generate_loss_path(work_dir, "previewer"))
    aggregated = train_aggregator(config, train, distilled.checkpoint_path,
                                  generate_checkpoint_path(work_dir, "aggregator"),
                                  generate_loss_path(work_dir, "aggregator"))
    return SmokeRun(config, manifest, train, stage1, distilled, aggregated)


@pytest.fixture(scope="module")
def mild_results(smoke):
    rows = smoke.level_rows("down4")
    results = {}
    for mode in ("adares", "no_reference"):
        sampler = replace(smoke.sampler, mode=mode)
        results[mode] = restore_rows(rows, smoke.aggregated.nets, smoke.schedule, sampler,
                                     smoke.config.training.batch_size)
    return results


def test_training_reduces_losses_and_keeps_frozen_groups(smoke):
    assert smoke.stage1.metrics["loss_last"] <= 0.5 * smoke.stage1.metrics["loss_first"]
    assert smoke.aggregated.metrics["loss_last"] <= 0.7 * smoke.aggregated.metrics["loss_first"]
    for group in ("denoiser_base", "encoder"):
        assert smoke.distilled.digests_before[group] == smoke.distilled.digests_after[group]
    for group in ("denoiser_base", "encoder", "adapters"):
        assert smoke.aggregated.digests_before[group] == smoke.aggregated.digests_after[group]


def test_distillation_makes_previews_consistent(smoke):
    lq, _, classes, _ = images_of(smoke.level_rows("down4"))
    grid = smoke.schedule.inference_grid(smoke.sampler.steps)
    base, _, _ = load_nets(smoke.stage1.checkpoint_path, smoke.config, allowed_phases=("base+dcp",))
    base.attach_previewer(smoke.config.nets.adapter_rank, smoke.config.nets.adapter_scale, Rng(0).fork("adapter"))
    cfg_scale = smoke.config.training.teacher_cfg

    def consistency(nets: RestorationNets) -> float:
        return self_consistency(nets, Tensor(lq), classes, smoke.schedule, grid, Rng(1), cfg_scale=cfg_scale)

    assert consistency(smoke.distilled.nets) <= 0.7 * consistency(base)


def test_preview_is_sharp_at_the_last_step(smoke):
    lq, hq, _, _ = images_of(smoke.level_rows("hq", 16))
    nets = smoke.distilled.nets
    eps = Tensor(Rng(2).normal(hq.shape))
    with no_grad():
        z_1 = noise_to(Tensor(hq), eps, 1, smoke.schedule)
        previews = run_preview(nets, z_1, 1, nets.context(Tensor(lq), 1), smoke.schedule).data
    assert np.mean([psnr(p, h) for p, h in zip(previews, hq)]) >= 30.0


def test_delta_follows_input_quality(smoke):
    logs_by_level = {}
    for level in ("hq", "down4", "down8_analog", "multi"):
        result = restore_rows(smoke.level_rows(level), smoke.aggregated.nets, smoke.schedule, smoke.sampler,
                              smoke.config.training.batch_size)
        logs_by_level[level] = result.logs
    stats = trajectory_report(logs_by_level)
    assert delta_ordering_fraction(stats, smoke.sampler.eta_cutoff) >= 0.8


def test_restoration_beats_input_and_reference_free_sampling(mild_results):
    full, plain = mild_results["adares"], mild_results["no_reference"]
    assert full.report().mean("psnr") >= full.baseline().mean("psnr") + 2.0
    assert full.report().mean("band_ssim") > plain.report().mean("band_ssim")


def test_ablations_reduce_to_simpler_samplers(smoke, mild_results, monkeypatch):
    lq, _, classes, indices = images_of(smoke.level_rows("down4", 8))
    nets, sampler = smoke.aggregated.nets, smoke.sampler
    plain, _ = adares_sample(lq, classes, nets, smoke.schedule, replace(sampler, mode="no_reference"), indices)
    np.testing.assert_array_equal(plain, ddim_sample(lq, classes, nets, smoke.schedule, sampler, indices))

    fixed, _ = adares_sample(lq, classes, nets, smoke.schedule, replace(sampler, mode="fixed"), indices)
    with monkeypatch.context() as patch:
        patch.setattr(sampler_module, "delta_indicator",
                      lambda psi, z_hat, prev, delta_max=5.0: np.ones(len(psi)))
        unit, _ = adares_sample(lq, classes, nets, smoke.schedule, sampler, indices)
    np.testing.assert_array_equal(fixed, unit)

    work_dir = smoke.config.paths.work_dir
    noisy_config = smoke.config.with_values("training", noisy_preview=True)
    noisy = train_aggregator(noisy_config, smoke.train, smoke.distilled.checkpoint_path,
                             generate_checkpoint_path(work_dir, "aggregator", "noisy_preview"),
                             generate_loss_path(work_dir, "aggregator", "noisy_preview"))
    noisy_result = restore_rows(smoke.level_rows("down4"), noisy.nets, smoke.schedule,
                                replace(sampler, mode="noisy_preview"), smoke.config.training.batch_size)
    assert mild_results["adares"].report().mean("band_ssim") >= noisy_result.report().mean("band_ssim")


def test_creative_restoration_keeps_structure(smoke):
    lq, _, classes, indices = images_of(smoke.level_rows("down4", 32))
    nets, sampler = smoke.aggregated.nets, smoke.sampler
    cutoff = sampler.steps // 2
    unconditional = ddim_sample(np.zeros_like(lq), nets.null_class, nets, smoke.schedule, sampler, indices)
    closer = 0
    for i in range(len(lq)):
        target = (int(classes[i]) + 1) % 4
        creative, _ = creative_sample(lq[i:i + 1], target, cutoff, nets, smoke.schedule, sampler, indices[i:i + 1])
        reference = downsample(lq[i:i + 1])
        creative_gap = np.sum((downsample(creative) - reference) ** 2)
        unconditional_gap = np.sum((downsample(unconditional[i:i + 1]) - reference) ** 2)
        closer += creative_gap < unconditional_gap
    assert closer >= 0.75 * len(lq)


def test_class_conditioned_stage1_stays_closer_to_the_input(smoke):
    work_dir = smoke.config.paths.work_dir
    image_only_config = smoke.config.with_values("training", dcp_text=False)
    image_only = train_stage1(image_only_config, smoke.train,
                              generate_checkpoint_path(work_dir, "base+dcp", "image_only"),
                              generate_loss_path(work_dir, "base+dcp", "image_only"))
    rows = smoke.level_rows("down8_analog", 16)
    lq, _, classes, indices = images_of(rows)
    grid = smoke.schedule.inference_grid(smoke.sampler.steps)
    estimates = {
        "class_conditioned": reference_row(lq, classes, smoke.stage1.nets, smoke.schedule, smoke.sampler, indices),
        "image_only": reference_row(lq, image_only.nets.null_class, image_only.nets, smoke.schedule, smoke.sampler,
                                    indices),
    }
    frame = reference_row_report(estimates, lq, grid, [str(index) for index in indices])
    early = frame[frame["step"] < len(grid) // 2].groupby("variant")["dist_lq"].mean()
    assert early["class_conditioned"] <= early["image_only"]
