from argparse import Namespace
from unittest.mock import patch

import pytest

from mcnet import __main__
from mcnet.__about__ import CHECKPOINT_FORMAT_VERSION, __version__
from mcnet.cli import (
    CONFIG_NAME,
    PRED_PATTERN,
    cmd_gen_data,
    createparser,
    exit_code,
    main,
)
from mcnet.errors import (
    CheckpointTruncatedError,
    ConfigError,
    ConfigMismatchError,
    GradCheckFailure,
    TrainingDivergedError,
    UsageError,
)
from mcnet.pgm import list_clip_dirs, load_clip, read_pgm
from mcnet.trainer import CHECKPOINT_NAME, METRICS_NAME


@pytest.fixture
def data_dir(tiny_config_file, tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", tiny_config_file, "--out", str(out)]) == 0
    return out


@pytest.fixture
def run_dir(tiny_config_file, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--config", tiny_config_file, "--out", str(out), "-q"])
    assert rc == 0
    return out


def test_should_parse_cli_arguments():
    parser = createparser()
    args = parser.parse_args(["gen-data", "--kind", "bouncing-ball", "--count", "3"])
    assert args.func is cmd_gen_data
    assert (args.kind, args.count, args.length) == ("bouncing-ball", 3, None)
    args = parser.parse_args(["grad-check", "--set", "a=1", "--set", "b=2"])
    assert args.set == ["a=1", "b=2"]
    assert args.tolerance == 1e-4
    assert (args.probes, args.refinements) == (2000, 2)


def test_should_let_options_override_config(tiny_config_file, tmp_path):
    args = Namespace(
        config=tiny_config_file,
        set=["data.length=3"],
        seed=None,
        out=str(tmp_path / "d"),
        kind="two-object",
        count=1,
        length=None,
    )
    assert cmd_gen_data(args) == f"wrote 1 clips of 3 frames to {tmp_path / 'd'}"
    clip = load_clip(tmp_path / "d" / "clip_0000")
    assert len(clip) == 3
    assert clip.descriptor["kind"] == "two-object"


def test_should_write_clip_directories(data_dir):
    dirs = list_clip_dirs(data_dir)
    assert [d.name for d in dirs] == ["clip_0000", "clip_0001"]
    assert len(load_clip(dirs[0])) == 6
    assert "data.count = 2" in (data_dir / CONFIG_NAME).read_text()


def test_should_render_same_bytes_twice(tiny_config_file, tmp_path):
    for name in ("a", "b"):
        out = str(tmp_path / name)
        rc = main(["gen-data", "--config", tiny_config_file, "--out", out])
        assert rc == 0
    for path in sorted((tmp_path / "a").rglob("*.pgm")):
        twin = tmp_path / "b" / path.relative_to(tmp_path / "a")
        assert twin.read_bytes() == path.read_bytes()


def test_should_fail_with_usage_code_for_bad_config(tmp_path, capsys):
    rc = main(["gen-data", "--kind", "spiral", "--out", str(tmp_path)])
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR")


def test_should_train_and_write_outputs(capsys, run_dir):
    assert (run_dir / CHECKPOINT_NAME).exists()
    assert len((run_dir / METRICS_NAME).read_text().splitlines()) == 3
    assert "train.iterations = 2" in (run_dir / CONFIG_NAME).read_text()
    assert "trained to iteration 2" in capsys.readouterr().out


def test_should_resume_training(run_dir, tiny_config_file, capsys):
    capsys.readouterr()
    rc = main(
        [
            "train",
            "--config",
            tiny_config_file,
            "--out",
            str(run_dir),
            "--resume",
            str(run_dir / CHECKPOINT_NAME),
            "--set",
            "train.iterations=3",
            "-q",
        ]
    )
    assert rc == 0
    assert "trained to iteration 3" in capsys.readouterr().out


def test_should_write_predicted_frames(run_dir, data_dir, tmp_path):
    out = tmp_path / "pred"
    rc = main(
        [
            "predict",
            "--checkpoint",
            str(run_dir / CHECKPOINT_NAME),
            "--clip",
            str(data_dir / "clip_0000"),
            "--steps",
            "3",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    for k in range(3):
        assert read_pgm(out / (PRED_PATTERN % k)).shape == (16, 16)
    assert not (out / (PRED_PATTERN % 3)).exists()


def test_should_reject_context_longer_than_clip(run_dir, data_dir, capsys):
    rc = main(
        [
            "predict",
            "--checkpoint",
            str(run_dir / CHECKPOINT_NAME),
            "--clip",
            str(data_dir / "clip_0000"),
            "--context",
            "7",
        ]
    )
    assert rc == 2
    assert "exceeds" in capsys.readouterr().err


def test_should_report_checkpoint_of_other_model(run_dir, data_dir):
    rc = main(
        [
            "predict",
            "--checkpoint",
            str(run_dir / CHECKPOINT_NAME),
            "--clip",
            str(data_dir / "clip_0000"),
            "--set",
            "model.residual=false",
        ]
    )
    assert rc == 4


def test_should_report_unreadable_checkpoint(tiny_config_file, data_dir, tmp_path):
    broken = tmp_path / "broken.mcn"
    broken.write_bytes(b"not a checkpoint")
    rc = main(
        [
            "predict",
            "--config",
            tiny_config_file,
            "--checkpoint",
            str(broken),
            "--clip",
            str(data_dir / "clip_0000"),
        ]
    )
    assert rc == 5


def test_should_score_static_clips_perfectly(tiny_config_file, tmp_path, capsys):
    data = tmp_path / "static"
    args = ["--config", tiny_config_file, "--set", "data.max_speed=0"]
    assert main(["gen-data", "--out", str(data)] + args) == 0
    capsys.readouterr()
    report = tmp_path / "report"
    rc = main(
        ["eval", "--baseline", "copy-last", "--data", str(data), "--out", str(report)]
        + args
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "copy-last: mean PSNR 100.0000 dB, mean SSIM 1.0000" in out
    lines = (report / "copy-last_steps.csv").read_text().splitlines()
    assert lines == [
        "step,psnr_mean,ssim_mean,n_clips,masked",
        "1,100.000000,1.000000,2,0",
        "2,100.000000,1.000000,2,0",
    ]


def test_should_write_decile_report(tiny_config_file, tmp_path):
    data = tmp_path / "data"
    args = ["--config", tiny_config_file]
    assert main(["gen-data", "--count", "10", "--out", str(data)] + args) == 0
    report = tmp_path / "report"
    rc = main(
        [
            "eval",
            "--baseline",
            "copy-last",
            "--data",
            str(data),
            "--masked",
            "--deciles",
            "--out",
            str(report),
        ]
        + args
    )
    assert rc == 0
    steps = (report / "copy-last_steps.csv").read_text().splitlines()
    assert [line.split(",")[-1] for line in steps[1:]] == ["0", "0", "1", "1"]
    deciles = (report / "copy-last_deciles.csv").read_text().splitlines()
    # ten deciles, two steps, unmasked and masked
    assert len(deciles) == 1 + 10 * 2 * 2


def test_should_compare_model_with_baseline(run_dir, data_dir, tmp_path, capsys):
    capsys.readouterr()
    report = tmp_path / "report"
    rc = main(
        [
            "eval",
            "--checkpoint",
            str(run_dir / CHECKPOINT_NAME),
            "--compare",
            "copy-last",
            "--data",
            str(data_dir),
            "--out",
            str(report),
        ]
    )
    assert rc == 0
    assert (report / "mcnet_steps.csv").exists()
    assert (report / "copy-last_steps.csv").exists()
    out = capsys.readouterr().out.splitlines()
    assert [line.split(":")[0] for line in out] == ["mcnet", "copy-last"]


def test_should_need_checkpoint_or_baseline(data_dir, capsys):
    assert main(["eval", "--data", str(data_dir)]) == 2
    assert "--checkpoint" in capsys.readouterr().err


def test_should_fail_for_missing_checkpoint(tiny_config_file, data_dir, tmp_path):
    rc = main(
        [
            "eval",
            "--config",
            tiny_config_file,
            "--checkpoint",
            str(tmp_path / "nowhere" / "model.mcn"),
            "--data",
            str(data_dir),
        ]
    )
    assert rc == 5


def test_should_pass_gradient_checks(capsys):
    assert main(["grad-check", "--probes", "20"]) == 0
    out = capsys.readouterr().out
    assert "all 20 gradient checks passed" in out
    assert "FAIL" not in out


def test_should_catch_injected_sign_bug(capsys):
    assert main(["grad-check", "--probes", "20", "--inject-bug", "tanh"]) == 1
    captured = capsys.readouterr()
    assert "FAIL add/mul/tanh" in captured.out
    assert captured.err.startswith("ERROR")


def test_should_fail_with_impossible_tolerance():
    assert main(["grad-check", "--probes", "20", "--tolerance", "1e-12"]) == 1


def test_should_print_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    out = capsys.readouterr().out
    assert out.strip() == "mcnet %s (checkpoint format %d)" % (
        __version__,
        CHECKPOINT_FORMAT_VERSION,
    )


def test_should_raise_systemexit_when_called_with_empty_arguments():
    with pytest.raises(SystemExit):
        main([])


@pytest.mark.parametrize(
    "err,code",
    [
        (GradCheckFailure("x"), 1),
        (ConfigError("x"), 2),
        (UsageError("x"), 2),
        (TrainingDivergedError("x"), 3),
        (ConfigMismatchError("x"), 4),
        (CheckpointTruncatedError("x"), 5),
        (FileNotFoundError("x"), 5),
    ],
)
def test_should_map_errors_to_exit_codes(err, code):
    assert exit_code(err) == code


@pytest.mark.parametrize("package_name", ["", "mcnet"])
def test_main_file_should_call_cli_main(package_name):
    with patch("mcnet.__main__.cli.main") as mocked_main:
        with patch("mcnet.__main__.__package__", package_name):
            __main__.main()
            mocked_main.assert_called_once()
