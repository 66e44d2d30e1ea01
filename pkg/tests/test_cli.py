"""Tests for the spad-gesture command-line entry point."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from spad_gesture.cli import build_parser, main, resolve_config
from spad_gesture.const import (
    CHECKPOINT_FILE,
    CONFUSION_FILE,
    DEFAULT_AMBIENT_LAMBDA,
    ENV_OUTPUT_DIR,
    FRAMES_FILE,
    HISTORY_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    PROFILE_CSV_FILE,
    PROFILE_FILE,
    PROFILE_SUMMARY_FILE,
    Command,
    ReportFormat,
)
from spad_gesture.data import load_dataset
from spad_gesture.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    """Run every command from an empty working directory."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(ENV_OUTPUT_DIR, raising=False)


@pytest.fixture
def dataset(tmp_path):
    """Return a synthetic dataset with 3 frames per class."""
    out = tmp_path / "data"
    assert main(["synth", "--per-class", "3", "--out", str(out)]) == EXIT_OK
    return out


def _train(data, out, arch="smlp", *extra):
    return main(
        [
            "train",
            "--data",
            str(data),
            "--arch",
            arch,
            "--max-epochs",
            "2",
            "--out",
            str(out),
            *extra,
        ]
    )


def test_synth_writes_dataset(tmp_path) -> None:
    """10 frames per class give 110 frames."""
    assert main(["synth", "--per-class", "10", "--out", str(tmp_path / "d")]) == 0

    frames, manifest = load_dataset(tmp_path / "d")

    assert len(frames) == 110
    assert manifest.frame_counts == (10,) * 11


def test_synth_is_byte_identical_across_runs(tmp_path) -> None:
    """The same seed writes the same files."""
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["synth", "--per-class", "4", "--seed", "5", "--out", out]) == 0

    for file in (FRAMES_FILE, MANIFEST_FILE):
        first = (tmp_path / "a" / file).read_bytes()
        assert first == (tmp_path / "b" / file).read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "--per-class", "0"],
        ["synth"],
        ["frobnicate"],
        ["train", "--lr", "fast"],
        ["train", "--arch", "smlp"],
    ],
)
def test_usage_errors_exit_1(argv) -> None:
    """Bad or missing arguments exit with status 1."""
    assert main(argv) == EXIT_USAGE


def test_missing_dataset_exits_2(tmp_path) -> None:
    """A dataset directory that does not exist is a data error."""
    assert _train(tmp_path / "nowhere", tmp_path / "out") == EXIT_DATA


def test_output_dir_from_environment(tmp_path, monkeypatch) -> None:
    """Without --out the environment variable picks the directory."""
    monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "env"))

    assert main(["synth", "--per-class", "1"]) == EXIT_OK
    assert (tmp_path / "env" / FRAMES_FILE).is_file()


def test_flags_override_config_file(tmp_path) -> None:
    """Flags win over the run config, which wins over defaults."""
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps({"seed": 7, "format": "csv", "train": {"lr": 0.01, "patience": 4}})
    )
    argv = ["train", "--config", str(config), "--lr", "0.05"]

    cfg = resolve_config(build_parser().parse_args(argv), argv)

    assert cfg.command is Command.TRAIN
    assert cfg.seed == 7
    assert cfg.report_format is ReportFormat.CSV
    assert cfg.train == {"lr": 0.05, "patience": 4, "seed": 7}


def test_val_ratio_from_config_file(tmp_path) -> None:
    """The run config sets the split ratio unless --val-ratio overrides it."""
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"val_ratio": 0.5}))
    argv = ["train", "--config", str(config)]

    from_file = resolve_config(build_parser().parse_args(argv), argv)
    argv = [*argv, "--val-ratio", "0.8"]
    from_flag = resolve_config(build_parser().parse_args(argv), argv)

    assert from_file.val_ratio == 0.5
    assert from_flag.val_ratio == 0.8


def test_synth_uses_config_seed(tmp_path) -> None:
    """The run config seed reaches the manifest."""
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"seed": 11, "synth": {"photon_budget": 500}}))

    assert main(["synth", "--config", str(config), "--per-class", "1"]) == EXIT_OK

    manifest = json.loads((tmp_path / "runs" / MANIFEST_FILE).read_text())
    assert manifest["seed"] == 11


def test_train_writes_artifacts_deterministically(tmp_path, dataset) -> None:
    """Two runs with one seed write identical histories and checkpoints."""
    for name in ("first", "second"):
        assert _train(dataset, tmp_path / name) == EXIT_OK

    first, second = tmp_path / "first", tmp_path / "second"
    assert (first / HISTORY_FILE).read_bytes() == (second / HISTORY_FILE).read_bytes()
    assert (first / CHECKPOINT_FILE).read_bytes() == (
        second / CHECKPOINT_FILE
    ).read_bytes()
    metrics = json.loads((first / METRICS_FILE).read_text())
    assert metrics["model"] == "smlp"
    assert metrics["parameters"] == 285_323
    assert metrics["train_frames"] == 22
    assert metrics["val_frames"] == 11
    with (first / HISTORY_FILE).open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_acc"]
    assert len(rows) == 3


def test_eval_reports_each_seed(tmp_path, dataset) -> None:
    """--seeds N gives N accuracies and a summed confusion matrix."""
    assert _train(dataset, tmp_path / "model") == EXIT_OK
    checkpoint = tmp_path / "model" / CHECKPOINT_FILE

    code = main(
        [
            "eval",
            "--checkpoint",
            str(checkpoint),
            "--data",
            str(dataset),
            "--seeds",
            "2",
            "--ambient",
            str(DEFAULT_AMBIENT_LAMBDA),
            "--out",
            str(tmp_path / "eval"),
        ]
    )

    assert code == EXIT_OK
    report = json.loads((tmp_path / "eval" / METRICS_FILE).read_text())
    assert report["seeds"] == [0, 1]
    assert len(report["conditions"]["clean"]["accuracies"]) == 2
    assert set(report["conditions"]["clean"]["spike_rates"]) == {"fc1", "fc2", "fc3"}
    assert report["ambient_lambda"] == DEFAULT_AMBIENT_LAMBDA
    assert "checkpoint_sha256" in report
    with (tmp_path / "eval" / CONFUSION_FILE).open() as handle:
        rows = list(csv.reader(handle))
    assert len(rows) == 12
    assert sum(int(value) for row in rows[1:] for value in row) == 2 * 33
    assert (tmp_path / "eval" / f"ambient_{CONFUSION_FILE}").is_file()


def test_eval_rejects_wrong_architecture(tmp_path, dataset) -> None:
    """--arch must name the checkpoint's model family."""
    assert _train(dataset, tmp_path / "model") == EXIT_OK
    checkpoint = tmp_path / "model" / CHECKPOINT_FILE

    code = main(
        [
            "eval",
            "--checkpoint",
            str(checkpoint),
            "--data",
            str(dataset),
            "--arch",
            "cnn",
        ]
    )

    assert code == EXIT_DATA


def test_eval_rejects_corrupted_checkpoint(tmp_path, dataset) -> None:
    """A truncated checkpoint exits with status 2."""
    assert _train(dataset, tmp_path / "model") == EXIT_OK
    checkpoint = tmp_path / "model" / CHECKPOINT_FILE
    checkpoint.write_bytes(checkpoint.read_bytes()[:-4])

    code = main(["eval", "--checkpoint", str(checkpoint), "--data", str(dataset)])

    assert code == EXIT_DATA


def test_profile_scnn_reduction(tmp_path, dataset) -> None:
    """The profile reports reduction = (1 - snn / cnn) x 100."""
    extra = ["--max-epochs", "1", "--timesteps", "2"]
    assert _train(dataset, tmp_path / "model", "scnn", *extra) == EXIT_OK
    checkpoint = tmp_path / "model" / CHECKPOINT_FILE

    code = main(
        [
            "profile",
            "--checkpoint",
            str(checkpoint),
            "--data",
            str(dataset),
            "--out",
            str(tmp_path / "profile"),
        ]
    )

    assert code == EXIT_OK
    report = json.loads((tmp_path / "profile" / PROFILE_FILE).read_text())
    assert report["model"] == "scnn"
    assert report["flops_cnn"] == 2 * (90_000 + 663_552 + 73_728 + 704)
    assert report["reduction_percent"] == pytest.approx(
        (1 - report["flops_snn"] / report["flops_cnn"]) * 100
    )
    assert report["seconds_per_image"] > 0
    with (tmp_path / "profile" / PROFILE_CSV_FILE).open() as handle:
        rows = list(csv.reader(handle))
    assert [row[0] for row in rows[1:]] == ["conv1", "conv2", "fc1", "fc2"]


def test_profile_cnn_as_csv(tmp_path, dataset) -> None:
    """--csv writes the report as key,value rows."""
    assert _train(dataset, tmp_path / "model", "cnn") == EXIT_OK
    checkpoint = tmp_path / "model" / CHECKPOINT_FILE

    code = main(
        [
            "profile",
            "--checkpoint",
            str(checkpoint),
            "--data",
            str(dataset),
            "--csv",
            "--out",
            str(tmp_path / "profile"),
        ]
    )

    assert code == EXIT_OK
    with (tmp_path / "profile" / f"{PROFILE_SUMMARY_FILE}.csv").open() as handle:
        rows = dict(csv.reader(handle))
    assert rows["model"] == "cnn"
    assert rows["flops_snn"] == ""


def test_import_released_copy(tmp_path) -> None:
    """import converts class directories into a native dataset."""
    for name in ("fist", "none"):
        (tmp_path / "src" / name).mkdir(parents=True)
        (tmp_path / "src" / name / "f.csv").write_text(",".join(["2"] * 64))

    src, out = str(tmp_path / "src"), str(tmp_path / "d")

    code = main(["import", "--src", src, "--out", out])

    assert code == EXIT_OK
    frames, manifest = load_dataset(tmp_path / "d")
    assert manifest.class_names == ("fist", "none")
    assert len(frames) == 2


def test_import_bad_layout_exits_2(tmp_path) -> None:
    """An unrecognized layout is a data error."""
    (tmp_path / "src").mkdir()

    assert main(["import", "--src", str(tmp_path / "src")]) == EXIT_DATA


def test_eval_names_classes_missing_from_the_dataset(tmp_path) -> None:
    """A two-class dataset still gets one confusion column per model class."""
    for name in ("fist", "none"):
        (tmp_path / "src" / name).mkdir(parents=True)
        values = np.arange(64 * 4) % 30
        text = "\n".join(" ".join(str(v) for v in row) for row in values.reshape(-1, 8))
        (tmp_path / "src" / name / "frames.txt").write_text(text)
    data = tmp_path / "d"
    assert main(["import", "--src", str(tmp_path / "src"), "--out", str(data)]) == 0
    assert _train(data, tmp_path / "model") == EXIT_OK
    checkpoint = str(tmp_path / "model" / CHECKPOINT_FILE)

    code = main(
        ["eval", "--checkpoint", checkpoint, "--data", str(data), "--out", "ev"]
    )

    assert code == EXIT_OK
    with (tmp_path / "ev" / CONFUSION_FILE).open() as handle:
        header = next(csv.reader(handle))
    assert header[:3] == ["fist", "none", "class_2"]
    assert len(header) == 11
