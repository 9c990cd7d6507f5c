"""Command-line entry point: dataset generation, the three training phases, restoration and diagnostics.

Exit codes: 0 success, 1 runtime failure, 2 configuration or phase-order error.
"""

import argparse
import os
import sys
from dataclasses import replace
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from preview_restore.bundle import PHASES, RestorationNets, checkpoint_variant, load_nets
from preview_restore.config import DEGRADATION_LEVELS, SAMPLER_MODES, RunConfig
from preview_restore.data import PairLoader, build_manifest, pair_from_row, select_split
from preview_restore.diffusion import NoiseSchedule
from preview_restore.errors import ConfigError, PhaseOrderError, RestoreError
from preview_restore.helper import describe_source_tree, exit_with_error, parse_int_list
from preview_restore.logging import logger
from preview_restore.path_utils import (
    generate_checkpoint_path,
    generate_image_path,
    generate_loss_path,
    generate_manifest_path,
    generate_output_dir,
    generate_run_log_path,
    generate_table_path,
    generate_trajectory_path,
)
from preview_restore.quality import delta_ordering_fraction, reference_row_report, trajectory_report
from preview_restore.sampling import RestoreResult, SamplerConfig, reference_row, restore_images, restore_rows
from preview_restore.storage import append_run_log, read_pgm, read_table, write_pgm, write_table
from preview_restore.training import train_aggregator, train_previewer, train_stage1
from preview_restore.validation import Validator

ORDERING_PASS_FRACTION = 0.8
BENCH_SAMPLES = 4
PREVIEW_ROW_IMAGES = 4
STAGE1_VARIANTS = {"class_conditioned": "standard", "image_only": "image_only"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preview-restore",
                                     description="Toy blind image restoration with previews and adaptive residuals.")
    parser.add_argument("--config", help="INI configuration file (defaults apply to every missing key)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one configuration key; repeatable")
    parser.add_argument("--debug", action="store_true", help="Debug-level logging")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("gen-data", help="Write the dataset manifest")
    commands.add_parser("train-stage1", help="Train denoiser and compact encoder")
    for name, help_text in (("distill-previewer", "Distill previewer adapters from a Stage I checkpoint"),
                            ("train-stage2", "Train the aggregator from a previewer checkpoint")):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--checkpoint", help="Input checkpoint (defaults to the previous phase's file)")

    restore = commands.add_parser("restore", help="Restore test images or PGM files")
    restore.add_argument("--checkpoint", help="Checkpoint to sample from")
    restore.add_argument("--level", choices=DEGRADATION_LEVELS, default="down4", help="Test-split level to restore")
    restore.add_argument("--input", nargs="+", help="LQ PGM files to restore instead of the test split")
    restore.add_argument("--class-id", type=int, default=0, help="Class condition for --input images")
    restore.add_argument("--limit", type=int, help="Restore only the first N test images")
    restore.add_argument("--tag", default="", help="Output sub-folder (defaults to the sampler mode)")

    analyze = commands.add_parser("analyze", help="Per-level trajectory statistics of the sampler")
    analyze.add_argument("--checkpoint", help="Checkpoint to sample from")
    analyze.add_argument("--limit", type=int, help="Images per degradation level")
    analyze.add_argument("--eta-sweep", help="Comma separated eta cutoffs; one indicator table per value")
    analyze.add_argument("--preview-row", action="store_true",
                         help="Per-step estimates of the class-conditioned and image-only Stage I models")
    analyze.add_argument("--level", choices=DEGRADATION_LEVELS, default="down8_analog",
                         help="Test-split level for --preview-row")

    bench = commands.add_parser("bench", help="Compare every sampler mode on one test level")
    bench.add_argument("--checkpoint", help="Checkpoint to sample from")
    bench.add_argument("--level", choices=DEGRADATION_LEVELS, default="down4")
    bench.add_argument("--limit", type=int, help="Images to restore per mode")
    return parser


def _work_path(config: RunConfig, *parts: str) -> str:
    return os.path.join(config.paths.work_dir, *parts)


def _manifest(config: RunConfig, validator: Validator) -> pd.DataFrame:
    return read_table(validator.verify_manifest(generate_manifest_path(config.paths.work_dir)))


def _loader(config: RunConfig, manifest: pd.DataFrame, split: str) -> PairLoader:
    return PairLoader(select_split(manifest, split), config.training.batch_size, config.training.seed,
                      workers=config.training.workers)


def _phase_input(config: RunConfig, path: Optional[str], phase: str, command: str) -> str:
    path = path or generate_checkpoint_path(config.paths.work_dir, phase)
    if not os.path.exists(path):
        raise PhaseOrderError(f"{command} needs a finished '{phase}' checkpoint; '{path}' does not exist")
    return path


def _training_outputs(config: RunConfig, validator: Validator, phase: str, variant: str = ""):
    validator.verify_writable(_work_path(config, "checkpoints"))
    validator.verify_writable(_work_path(config, "logs"))
    return (generate_checkpoint_path(config.paths.work_dir, phase, variant),
            generate_loss_path(config.paths.work_dir, phase, variant))


def sampling_nets(config: RunConfig, checkpoint: Optional[str], mode: str, validator: Validator) -> RestorationNets:
    """
    Load the networks a sampler mode needs. ``no_reference`` runs from any finished phase
    (the latest one present); every other mode needs the aggregator.
    """
    needs_aggregator = mode != "no_reference"
    allowed = ("aggregator",) if needs_aggregator else PHASES
    if checkpoint is None:
        existing = [generate_checkpoint_path(config.paths.work_dir, phase) for phase in reversed(allowed)]
        existing = [path for path in existing if os.path.exists(path)]
        checkpoint = existing[0] if existing else generate_checkpoint_path(config.paths.work_dir, "aggregator")
    if not os.path.exists(checkpoint):
        raise PhaseOrderError(f"Sampler mode '{mode}' needs a checkpoint of phase {list(allowed)}; "
                              f"'{checkpoint}' does not exist")
    nets, meta, _ = load_nets(checkpoint, config, allowed_phases=allowed)
    validator.verify_phase(meta, allowed, checkpoint)
    return nets


def write_result(out_dir: str, result: RestoreResult) -> Dict[str, str]:
    """Restored/LQ/HQ PGMs, the metric table (when references exist) and one CSV per trajectory."""
    for index in range(len(result.names)):
        write_pgm(generate_image_path(out_dir, index, "restored"), result.restored[index])
        write_pgm(generate_image_path(out_dir, index, "lq"), result.lq[index])
        if result.hq is not None:
            write_pgm(generate_image_path(out_dir, index, "hq"), result.hq[index])
    for index, log in enumerate(result.logs):
        if len(log):
            write_table(log.to_frame(), generate_trajectory_path(out_dir, index))
    paths = {}
    if result.hq is not None:
        report = result.report()
        paths["metrics"] = generate_table_path(out_dir, "metrics")
        write_table(report.to_frame(), paths["metrics"])
        baseline = result.baseline().summary()
        logger.log_block("Restoration Metrics", [
            f"{key}: {value:.4f}" if isinstance(value, float) else f"{key}: {value}"
            for key, value in report.summary().items()
        ] + [f"input psnr_mean: {baseline['psnr_mean']:.4f}", f"input band_ssim_mean: {baseline['band_ssim_mean']:.4f}"])
    return paths


def cmd_gen_data(config: RunConfig, args) -> pd.DataFrame:
    validator = Validator(config)
    path = generate_manifest_path(config.paths.work_dir)
    validator.verify_writable(os.path.dirname(path))
    manifest = build_manifest(config)
    write_table(manifest, path)
    counts = manifest.groupby("split").size()
    logger.log_block("Dataset Manifest", [f"Path: {path}"] + [f"{split}: {count}" for split, count in counts.items()])
    return manifest


def cmd_train_stage1(config: RunConfig, args):
    validator = Validator(config)
    manifest = _manifest(config, validator)
    checkpoint, loss_path = _training_outputs(config, validator, "base+dcp", checkpoint_variant(config, "base+dcp"))
    result = train_stage1(config, _loader(config, manifest, "train"), checkpoint, loss_path)
    logger.log_block("Stage I", [f"{key}: {value:.5f}" for key, value in result.metrics.items()])
    return result


def cmd_distill_previewer(config: RunConfig, args):
    validator = Validator(config)
    manifest = _manifest(config, validator)
    base_path = _phase_input(config, args.checkpoint, "base+dcp", "distill-previewer")
    checkpoint, loss_path = _training_outputs(config, validator, "previewer")
    val_loader = _loader(config, manifest, "val")
    result = train_previewer(config, _loader(config, manifest, "train"), val_loader.ordered(), base_path,
                             checkpoint, loss_path)
    logger.log_block("Previewer Distillation", [f"{key}: {value:.5f}" for key, value in result.metrics.items()])
    return result


def cmd_train_stage2(config: RunConfig, args):
    validator = Validator(config)
    manifest = _manifest(config, validator)
    previewer_path = _phase_input(config, args.checkpoint, "previewer", "train-stage2")
    checkpoint, loss_path = _training_outputs(config, validator, "aggregator")
    result = train_aggregator(config, _loader(config, manifest, "train"), previewer_path, checkpoint, loss_path)
    logger.log_block("Stage II", [f"{key}: {value:.5f}" for key, value in result.metrics.items()])
    return result


def cmd_restore(config: RunConfig, args) -> RestoreResult:
    validator = Validator(config)
    sampler = SamplerConfig.from_run_config(config)
    schedule = NoiseSchedule.from_config(config)
    nets = sampling_nets(config, args.checkpoint, sampler.mode, validator)
    out_dir = validator.verify_writable(generate_output_dir(config.paths.work_dir, "restore", args.tag or sampler.mode))
    if args.input:
        images = validator.verify_resolution(np.stack([read_pgm(path) for path in args.input]))
        names = [os.path.splitext(os.path.basename(path))[0] for path in args.input]
        result = restore_images(images, args.class_id, nets, schedule, sampler, np.arange(len(images)),
                                config.training.batch_size, names=names)
    else:
        rows = select_split(_manifest(config, validator), "test", args.level)
        rows = rows.head(args.limit) if args.limit else rows
        result = restore_rows(rows, nets, schedule, sampler, config.training.batch_size)
    write_result(out_dir, result)
    logger.log_info(f"Restored {len(result.names)} image(s) into {out_dir}")
    return result


def export_reference_row(config: RunConfig, args, validator: Validator) -> pd.DataFrame:
    """
    Per-step clean-image estimates of the class-conditioned and the image-only Stage I
    models on the first test images of ``args.level``, as PGMs plus a distance-to-LQ table.

    Raises:
        PhaseOrderError: One of the two Stage I checkpoints is missing.
    """
    sampler = SamplerConfig.from_run_config(config)
    schedule = NoiseSchedule.from_config(config)
    grid = schedule.inference_grid(sampler.steps)
    rows = select_split(_manifest(config, validator), "test", args.level).head(args.limit or PREVIEW_ROW_IMAGES)
    pairs = [pair_from_row(row) for _, row in rows.iterrows()]
    lq = np.stack([pair.lq for pair in pairs])[:, None]
    class_ids = np.array([pair.class_id for pair in pairs])
    indices = rows["index"].to_numpy(dtype=np.int64)
    names = [f"{args.level}_{int(index):05d}" for index in indices]
    out_dir = validator.verify_writable(generate_output_dir(config.paths.work_dir, "analyze", "preview_row"))

    estimates = {}
    for label, variant in STAGE1_VARIANTS.items():
        path = generate_checkpoint_path(config.paths.work_dir, "base+dcp", variant)
        if not os.path.exists(path):
            flag = "" if variant == "standard" else " --set training.dcp_text=false"
            raise PhaseOrderError(f"--preview-row needs the {label} Stage I checkpoint '{path}'; "
                                  f"run train-stage1{flag} first")
        nets, meta, _ = load_nets(path, config, allowed_phases=("base+dcp",))
        validator.verify_phase(meta, ("base+dcp",), path)
        # image-only Stage I was trained on the null class alone
        classes = class_ids if variant == "standard" else nets.null_class
        estimates[label] = reference_row(lq, classes, nets, schedule, sampler, indices)
        for i in range(len(pairs)):
            for k in range(len(grid)):
                write_pgm(generate_image_path(out_dir, i, f"{label}_step{k:02d}"), estimates[label][i, k])

    frame = reference_row_report(estimates, lq, grid, names)
    write_table(frame, generate_table_path(out_dir, "preview_row"))
    early = frame[frame["step"] < max(1, len(grid) // 2)]
    logger.log_block("Generative References", [
        f"{label}: mean distance to LQ over the first half of the grid {value:.5f}"
        for label, value in early.groupby("variant", sort=False)["dist_lq"].mean().items()
    ])
    return frame


def cmd_analyze(config: RunConfig, args) -> Union[Dict[int, float], pd.DataFrame]:
    """
    Trajectory tables per level; with ``--eta-sweep`` one indicator table per cutoff and
    with ``--preview-row`` the Stage I estimate rows instead.
    """
    validator = Validator(config)
    if args.preview_row:
        return export_reference_row(config, args, validator)
    base = SamplerConfig.from_run_config(config)
    schedule = NoiseSchedule.from_config(config)
    nets = sampling_nets(config, args.checkpoint, base.mode, validator)
    manifest = _manifest(config, validator)
    out_dir = validator.verify_writable(generate_output_dir(config.paths.work_dir, "analyze"))
    etas: List[int] = parse_int_list(args.eta_sweep) if args.eta_sweep else [base.eta_cutoff]

    fractions = {}
    for eta in etas:
        sampler = replace(base, eta_cutoff=eta)
        logs_by_level = {}
        for level in DEGRADATION_LEVELS:
            rows = select_split(manifest, "test", level)
            rows = rows.head(args.limit) if args.limit else rows
            logs_by_level[level] = restore_rows(rows, nets, schedule, sampler, config.training.batch_size).logs
        stats = trajectory_report(logs_by_level)
        if args.eta_sweep:
            write_table(stats.panel("c"), generate_table_path(out_dir, f"panel_c_delta_eta{eta}"))
        else:
            stats.write(out_dir)
        fractions[eta] = delta_ordering_fraction(stats, eta)
        verdict = "PASS" if fractions[eta] >= ORDERING_PASS_FRACTION else "FAIL"
        logger.log_info(f"delta ordering {' > '.join(DEGRADATION_LEVELS)} at eta={eta}: "
                        f"{fractions[eta]:.1%} of evaluated steps [{verdict}]")
    return fractions


def cmd_bench(config: RunConfig, args) -> pd.DataFrame:
    """Every sampler mode the checkpoint supports on one test level, plus the unrestored input."""
    validator = Validator(config)
    base = SamplerConfig.from_run_config(config)
    schedule = NoiseSchedule.from_config(config)
    nets = sampling_nets(config, args.checkpoint, "no_reference", validator)
    modes = SAMPLER_MODES if nets.aggregator is not None else ("no_reference",)
    rows = select_split(_manifest(config, validator), "test", args.level)
    rows = rows.head(args.limit) if args.limit else rows
    out_dir = validator.verify_writable(generate_output_dir(config.paths.work_dir, "bench", args.level))

    table = []
    for mode in modes:
        result = restore_rows(rows, nets, schedule, replace(base, mode=mode), config.training.batch_size)
        if not table:
            table.append({"mode": "input", **result.baseline().summary()})
        table.append({"mode": mode, **result.report().summary()})
        for index in range(min(BENCH_SAMPLES, len(result.names))):
            write_pgm(generate_image_path(out_dir, index, mode), result.restored[index])
    frame = pd.DataFrame(table)
    write_table(frame, generate_table_path(out_dir, "bench"))
    logger.log_frame_summary(frame.drop(columns=["count"]), f"Bench ({args.level})")
    return frame


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "distill-previewer": cmd_distill_previewer,
    "train-stage2": cmd_train_stage2,
    "restore": cmd_restore,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}


def _record_run(config: RunConfig, command: str, status: str):
    line = (f"{command} status={status} config_hash={config.config_hash} seed={config.training.seed} "
            f"sampler_seed={config.sampler.seed} source={describe_source_tree()}")
    try:
        append_run_log(generate_run_log_path(config.paths.work_dir), line,
                       timestamp=datetime.now().isoformat(timespec="seconds"))
    except OSError as e:
        logger.log_warning(f"Run log not written: {e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.update_debug_mode(args.debug)
    config = None
    status = "failed"
    try:
        config = RunConfig.load(args.config, args.overrides)
        config.log_params()
        logger.log_start(args.command)
        COMMANDS[args.command](config, args)
        status = "ok"
        logger.log_end(args.command)
    except (ConfigError, PhaseOrderError) as e:
        exit_with_error(f"{args.command}: {e}", code=2)
    except (RestoreError, RuntimeError, OSError, ValueError) as e:
        exit_with_error(f"{args.command} failed: {e}", code=1)
    finally:
        if config is not None:
            _record_run(config, args.command, status)
    return 0


if __name__ == "__main__":
    sys.exit(main())
