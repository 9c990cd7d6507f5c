import os

import numpy as np
import pytest

from conftest import TINY_OVERRIDES, perturb
from preview_restore.bundle import build_nets, load_nets, save_nets
from preview_restore.cli import build_parser, main
from preview_restore.data import pair_from_row, select_split
from preview_restore.diffusion import NoiseSchedule
from preview_restore.path_utils import (
    generate_checkpoint_path,
    generate_image_path,
    generate_manifest_path,
    generate_output_dir,
    generate_run_log_path,
    generate_table_path,
)
from preview_restore.quality import reference_row_report
from preview_restore.sampling import SamplerConfig, reference_row, restore_rows
from preview_restore.storage import read_table, write_pgm


def cli_args(work_dir, *command, extra=()):
    args = []
    for override in list(TINY_OVERRIDES) + [f"paths.work_dir={work_dir}"] + list(extra):
        args += ["--set", override]
    return args + list(command)


def exit_code(argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    return excinfo.value.code


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["--set", "sampler.steps=5", "restore", "--input", "a.pgm", "b.pgm"])
    assert args.overrides == ["sampler.steps=5"]
    assert args.input == ["a.pgm", "b.pgm"] and args.level == "down4"


def test_gen_data_is_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(cli_args(first, "gen-data")) == 0
    assert main(cli_args(second, "gen-data")) == 0
    with open(generate_manifest_path(str(first)), "rb") as a, open(generate_manifest_path(str(second)), "rb") as b:
        assert a.read() == b.read()


def test_unwritable_work_dir_exits_with_usage_code(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    assert exit_code(cli_args(blocker, "gen-data")) == 2


def test_unknown_override_exits_with_usage_code(tmp_path):
    assert exit_code(cli_args(tmp_path / "run", "gen-data", extra=["sampler.unknown=1"])) == 2


def test_phases_must_run_in_order(tmp_path):
    work_dir = tmp_path / "run"
    assert exit_code(cli_args(work_dir, "train-stage1")) == 2
    assert main(cli_args(work_dir, "gen-data")) == 0
    assert exit_code(cli_args(work_dir, "distill-previewer")) == 2
    assert exit_code(cli_args(work_dir, "train-stage2")) == 2
    assert exit_code(cli_args(work_dir, "restore")) == 2

    with open(generate_run_log_path(str(work_dir)), encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert len(lines) == 5
    assert [line.split()[1] for line in lines] == ["train-stage1", "gen-data", "distill-previewer", "train-stage2",
                                                   "restore"]
    assert "status=ok" in lines[1] and all("status=failed" in lines[i] for i in (0, 2, 3, 4))
    assert all("config_hash=" in line and "sampler_seed=" in line for line in lines)


def test_restore_without_reference_matches_the_library(tmp_path, tiny_config, tiny_nets):
    work_dir = str(tmp_path / "run")
    assert main(cli_args(work_dir, "gen-data")) == 0
    save_nets(generate_checkpoint_path(work_dir, "base+dcp"), tiny_nets, "base+dcp", tiny_config, step=2)

    assert main(cli_args(work_dir, "restore", "--limit", "2", extra=["sampler.mode=no_reference"])) == 0
    out_dir = generate_output_dir(work_dir, "restore", "no_reference")
    metrics = read_table(os.path.join(out_dir, "metrics.csv"))
    assert len(metrics) == 2

    config = tiny_config.with_values("sampler", mode="no_reference")
    nets, _, _ = load_nets(generate_checkpoint_path(work_dir, "base+dcp"), config)
    rows = select_split(read_table(generate_manifest_path(work_dir)), "test", "down4").head(2)
    result = restore_rows(rows, nets, NoiseSchedule.from_config(config), SamplerConfig.from_run_config(config),
                          config.training.batch_size)
    expected = str(tmp_path / "expected.pgm")
    for index in range(2):
        write_pgm(expected, result.restored[index])
        with open(expected, "rb") as a, open(generate_image_path(out_dir, index, "restored"), "rb") as b:
            assert a.read() == b.read()
    assert metrics["psnr"].tolist() == pytest.approx(result.report().psnr, rel=1e-6)


def test_restore_rejects_wrong_resolution_inputs(tmp_path, tiny_config, tiny_nets):
    work_dir = str(tmp_path / "run")
    save_nets(generate_checkpoint_path(work_dir, "base+dcp"), tiny_nets, "base+dcp", tiny_config, step=2)
    small = str(tmp_path / "small.pgm")
    write_pgm(small, np.zeros((16, 16)))
    argv = cli_args(work_dir, "restore", "--input", small, extra=["sampler.mode=no_reference"])
    assert exit_code(argv) == 1


def test_restore_loose_inputs(tmp_path, tiny_config, tiny_nets, lq_batch):
    work_dir = str(tmp_path / "run")
    save_nets(generate_checkpoint_path(work_dir, "base+dcp"), tiny_nets, "base+dcp", tiny_config, step=2)
    inputs = []
    for index, image in enumerate(lq_batch[0]):
        inputs.append(str(tmp_path / f"input{index}.pgm"))
        write_pgm(inputs[-1], image)
    argv = cli_args(work_dir, "restore", "--input", *inputs, "--class-id", "1", "--tag", "loose",
                    extra=["sampler.mode=no_reference"])
    assert main(argv) == 0
    out_dir = generate_output_dir(work_dir, "restore", "loose")
    assert os.path.exists(generate_image_path(out_dir, 1, "restored"))
    assert not os.path.exists(os.path.join(out_dir, "metrics.csv"))


def test_preview_row_compares_both_stage1_variants(tmp_path, tiny_config, tiny_nets):
    work_dir = str(tmp_path / "run")
    assert main(cli_args(work_dir, "gen-data")) == 0
    save_nets(generate_checkpoint_path(work_dir, "base+dcp"), tiny_nets, "base+dcp", tiny_config, step=2)
    argv = cli_args(work_dir, "analyze", "--preview-row", "--limit", "2")
    assert exit_code(argv) == 2

    image_only_config = tiny_config.with_values("training", dcp_text=False)
    image_only = build_nets(image_only_config)
    perturb(image_only.encoder.parameters(), seed=5)
    save_nets(generate_checkpoint_path(work_dir, "base+dcp", "image_only"), image_only, "base+dcp",
              image_only_config, step=2)
    assert main(argv) == 0

    out_dir = generate_output_dir(work_dir, "analyze", "preview_row")
    frame = read_table(generate_table_path(out_dir, "preview_row"))
    assert frame["variant"].unique().tolist() == ["class_conditioned", "image_only"]
    assert len(frame) == 2 * 2 * tiny_config.sampler.steps
    assert (frame["dist_lq"] >= 0.0).all()
    assert os.path.exists(generate_image_path(out_dir, 1, f"image_only_step{tiny_config.sampler.steps - 1:02d}"))

    rows = select_split(read_table(generate_manifest_path(work_dir)), "test", "down8_analog").head(2)
    pairs = [pair_from_row(row) for _, row in rows.iterrows()]
    lq = np.stack([pair.lq for pair in pairs])[:, None]
    classes = np.array([pair.class_id for pair in pairs])
    schedule = NoiseSchedule.from_config(tiny_config)
    sampler = SamplerConfig.from_run_config(tiny_config)
    nets, _, _ = load_nets(generate_checkpoint_path(work_dir, "base+dcp"), tiny_config)
    row = reference_row(lq, classes, nets, schedule, sampler, rows["index"].to_numpy())
    names = [f"down8_analog_{int(index):05d}" for index in rows["index"]]
    expected = reference_row_report({"class_conditioned": row}, lq, schedule.inference_grid(sampler.steps), names)
    conditioned = frame[frame["variant"] == "class_conditioned"].reset_index(drop=True)
    assert conditioned["image"].tolist() == expected["image"].tolist()
    assert conditioned["dist_lq"].tolist() == pytest.approx(expected["dist_lq"].tolist(), rel=1e-6)
