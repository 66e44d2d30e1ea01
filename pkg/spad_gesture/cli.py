"""Command-line entry point: synth, train, eval, profile and import."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NoReturn

import numpy as np

from .config import load_run_config
from .const import (
    CHECKPOINT_FILE,
    CONF_BATCH_SIZE,
    CONF_LEARNING_RATE,
    CONF_MAX_EPOCHS,
    CONF_PATIENCE,
    CONF_SEED,
    CONF_TIMESTEPS,
    CONFUSION_FILE,
    DEFAULT_EVAL_SEEDS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    DEFAULT_VALIDATION_RATIO,
    ENV_OUTPUT_DIR,
    HISTORY_FILE,
    LOGGER,
    MANIFEST_FILE,
    METRICS_FILE,
    PROFILE_CSV_FILE,
    PROFILE_FILE,
    PROFILE_SUMMARY_FILE,
    Command,
    ModelKind,
    ReportFormat,
)
from .data import (
    SyntheticGestureConfig,
    import_released,
    load_dataset,
    save_dataset,
    split,
    synth_generate,
)
from .errors import EXIT_OK, EXIT_USAGE, SpadGestureError, UsageError
from .imaging import preprocess_counts
from .models import (
    ArchitectureSpec,
    build_model,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .profiling import build_profile, time_inference
from .reporting import sha256_file, write_csv, write_report
from .training import (
    EVAL_BATCH_SIZE,
    HISTORY_HEADER,
    TrainConfig,
    evaluate,
    evaluate_seeds,
    train,
    training_streams,
)


class ArgumentParser(argparse.ArgumentParser):
    """Parser that reports bad usage as UsageError instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


@dataclass
class RunConfig:
    """Resolved settings of one invocation: flags over config file over defaults."""

    command: Command
    argv: list[str]
    out: Path
    seed: int = DEFAULT_SEED
    data: Path | None = None
    arch: str | None = None
    checkpoint: Path | None = None
    ambient: float | None = None
    seeds: int = DEFAULT_EVAL_SEEDS
    report_format: ReportFormat = ReportFormat.TEXT
    per_class: int | None = None
    source: Path | None = None
    split_name: str | None = None
    val_ratio: float = DEFAULT_VALIDATION_RATIO
    train: dict[str, Any] = field(default_factory=dict)
    synth: dict[str, Any] = field(default_factory=dict)


def build_parser() -> ArgumentParser:
    """Return the argument parser with one sub-parser per command."""
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument(
        "--csv", action="store_true", help="write reports as CSV instead of JSON"
    )
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    common.add_argument("--debug", action="store_true", help="log debug detail")

    parser = ArgumentParser(
        prog="spad-gesture",
        description="Spiking and conventional gesture classifiers for 8x8 "
        "photon-count frames.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser(
        Command.SYNTH.value, parents=[common], help="generate a synthetic dataset"
    )
    synth.add_argument("--per-class", type=int, help="frames per class")
    synth.add_argument("--rotation", type=float, help="rotation half-range (deg)")
    synth.add_argument("--photon-budget", type=float, help="signal photons per frame")
    synth.add_argument("--background", type=float, help="background rate per pixel")

    train_cmd = commands.add_parser(
        Command.TRAIN.value, parents=[common], help="train a model"
    )
    train_cmd.add_argument("--data", help="training dataset directory")
    train_cmd.add_argument("--arch", help="architecture config (or cnn/scnn/smlp)")
    train_cmd.add_argument("--lr", type=float, help="Adam learning rate")
    train_cmd.add_argument("--batch-size", type=int, help="mini-batch size")
    train_cmd.add_argument("--max-epochs", type=int, help="epoch cap")
    train_cmd.add_argument("--patience", type=int, help="early-stopping patience")
    train_cmd.add_argument("--timesteps", type=int, help="timesteps for spiking models")
    train_cmd.add_argument(
        "--val-ratio", type=float, help="share of the data kept for training"
    )

    for command, text in (
        (Command.EVAL, "evaluate a checkpoint"),
        (Command.PROFILE, "count operations and time inference"),
    ):
        sub = commands.add_parser(command.value, parents=[common], help=text)
        sub.add_argument("--checkpoint", help="checkpoint file")
        sub.add_argument("--data", help="test dataset directory")
        sub.add_argument("--arch", help="expected architecture config")
        sub.add_argument("--ambient", type=float, help="ambient-light rate per pixel")
        if command is Command.EVAL:
            sub.add_argument("--seeds", type=int, help="number of encoder seeds")

    importer = commands.add_parser(
        Command.IMPORT.value, parents=[common], help="import the released dataset"
    )
    importer.add_argument("--src", help="released dataset directory")
    importer.add_argument("--split", choices=["train", "test"], help="split subdir")
    return parser


def _first(*values: Any) -> Any:
    return next((value for value in values if value is not None), None)


def resolve_config(args: argparse.Namespace, argv: Sequence[str]) -> RunConfig:
    """Merge flags, the --config file and defaults."""
    file_cfg = load_run_config(args.config) if args.config else {}
    command = Command(args.command)
    out = _first(
        args.out,
        file_cfg.get("out"),
        os.environ.get(ENV_OUTPUT_DIR),
        DEFAULT_OUTPUT_DIR,
    )
    cfg = RunConfig(
        command=command,
        argv=list(argv),
        out=Path(out),
        seed=_first(args.seed, file_cfg.get("seed"), DEFAULT_SEED),
        report_format=ReportFormat.CSV
        if args.csv or file_cfg.get("format") == ReportFormat.CSV.value
        else ReportFormat.TEXT,
    )
    cfg.arch = _first(getattr(args, "arch", None), file_cfg.get("arch"))
    data = _first(getattr(args, "data", None), file_cfg.get("data"))
    cfg.data = Path(data) if data is not None else None
    checkpoint = _first(getattr(args, "checkpoint", None), file_cfg.get("checkpoint"))
    cfg.checkpoint = Path(checkpoint) if checkpoint is not None else None
    cfg.ambient = _first(getattr(args, "ambient", None), file_cfg.get("ambient"))
    cfg.seeds = _first(
        getattr(args, "seeds", None), file_cfg.get("seeds"), DEFAULT_EVAL_SEEDS
    )
    cfg.per_class = getattr(args, "per_class", None)
    src = getattr(args, "src", None)
    cfg.source = Path(src) if src is not None else None
    cfg.split_name = getattr(args, "split", None)
    cfg.val_ratio = _first(
        getattr(args, "val_ratio", None),
        file_cfg.get("val_ratio"),
        DEFAULT_VALIDATION_RATIO,
    )

    cfg.train = dict(file_cfg.get("train", {}))
    for key, attr in (
        (CONF_LEARNING_RATE, "lr"),
        (CONF_BATCH_SIZE, "batch_size"),
        (CONF_MAX_EPOCHS, "max_epochs"),
        (CONF_PATIENCE, "patience"),
        (CONF_TIMESTEPS, "timesteps"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            cfg.train[key] = value
    cfg.train[CONF_SEED] = cfg.seed

    cfg.synth = dict(file_cfg.get("synth", {}))
    for key, attr in (
        ("rotation", "rotation"),
        ("photon_budget", "photon_budget"),
        ("background", "background"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            cfg.synth[key] = value
    cfg.synth["seed"] = cfg.seed
    return cfg


def _require(value: Any, flag: str, command: Command) -> Any:
    if value is None:
        raise UsageError(f"{command.value} needs {flag}")
    return value


def _provenance(cfg: RunConfig) -> dict[str, Any]:
    report: dict[str, Any] = {
        "command": cfg.command.value,
        "argv": cfg.argv,
        "seed": cfg.seed,
    }
    if cfg.data is not None and (cfg.data / MANIFEST_FILE).is_file():
        report["dataset_manifest_sha256"] = sha256_file(cfg.data / MANIFEST_FILE)
    if cfg.checkpoint is not None and cfg.checkpoint.is_file():
        report["checkpoint_sha256"] = sha256_file(cfg.checkpoint)
    return report


def _flatten(report: dict[str, Any], prefix: str = "") -> list[list[Any]]:
    rows: list[list[Any]] = []
    for key in sorted(report):
        value = report[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, f"{name}."))
        elif isinstance(value, list):
            rows.append([name, " ".join(str(item) for item in value)])
        else:
            rows.append([name, value])
    return rows


def emit_report(cfg: RunConfig, name: str, report: dict[str, Any]) -> Path:
    """Write a report as JSON text, or as key,value CSV with --csv."""
    if cfg.report_format is ReportFormat.CSV:
        return write_csv(cfg.out / f"{name}.csv", ["key", "value"], _flatten(report))
    return write_report(cfg.out / name, report)


def _expected_kind(arch: str | None) -> ModelKind | None:
    return ArchitectureSpec.load(arch).name if arch else None


def cmd_synth(cfg: RunConfig) -> Path:
    """Write a synthetic dataset into the output directory."""
    per_class = _require(cfg.per_class, "--per-class", cfg.command)
    if per_class < 1:
        raise UsageError(f"--per-class must be at least 1, got {per_class}")
    synth_cfg = SyntheticGestureConfig.from_overrides(cfg.synth)
    frames, manifest = synth_generate(synth_cfg, per_class)
    save_dataset(cfg.out, frames, manifest)
    return cfg.out


def cmd_train(cfg: RunConfig) -> Path:
    """Train, then write the best checkpoint, history.csv and the metrics report."""
    data = _require(cfg.data, "--data", cfg.command)
    arch = _require(cfg.arch, "--arch", cfg.command)
    if not 0 < cfg.val_ratio < 1:
        raise UsageError(f"--val-ratio must lie in (0, 1), got {cfg.val_ratio}")
    train_cfg = TrainConfig.from_overrides(cfg.train)
    spec = ArchitectureSpec.load(arch)
    frames, _ = load_dataset(data)
    train_set, val_set = split(frames, cfg.val_ratio, cfg.seed)

    model = build_model(spec, training_streams(train_cfg.seed)["init"])
    start = time.perf_counter()
    best, history = train(model, train_set, val_set, train_cfg)
    seconds = time.perf_counter() - start

    checkpoint_path = save_checkpoint(best, cfg.out / CHECKPOINT_FILE)
    write_csv(
        cfg.out / HISTORY_FILE, HISTORY_HEADER, (row.as_row() for row in history)
    )
    params, size = count_params(best.restore())
    cfg.checkpoint = checkpoint_path
    report = _provenance(cfg)
    report.update(
        {
            "model": spec.name.value,
            "parameters": params,
            "model_bytes": size,
            "model_mb": size / 1e6,
            "train_frames": len(train_set),
            "val_frames": len(val_set),
            "epochs_run": len(history),
            "best_epoch": best.metadata["epoch"],
            "best_val_accuracy": best.metadata["val_accuracy"],
            "training_seconds": seconds,
            "train_config": {
                "lr": train_cfg.lr,
                "betas": list(train_cfg.betas),
                "eps_adam": train_cfg.eps_adam,
                "batch_size": train_cfg.batch_size,
                "max_epochs": train_cfg.max_epochs,
                "patience": train_cfg.patience,
                "timesteps": train_cfg.timesteps,
            },
        }
    )
    emit_report(cfg, METRICS_FILE, report)
    return checkpoint_path


def _class_header(names: Sequence[str], num_classes: int) -> list[str]:
    """Name each of the model's classes, numbering those the dataset lacks."""
    return list(names[:num_classes]) + [
        f"class_{index}" for index in range(len(names), num_classes)
    ]


def _confusion_rows(counts: np.ndarray) -> list[list[int]]:
    return [[int(value) for value in row] for row in counts]


def cmd_eval(cfg: RunConfig) -> Path:
    """Evaluate clean and, with --ambient, ambient-light conditions."""
    checkpoint = _require(cfg.checkpoint, "--checkpoint", cfg.command)
    data = _require(cfg.data, "--data", cfg.command)
    if cfg.seeds < 1:
        raise UsageError(f"--seeds must be at least 1, got {cfg.seeds}")
    model = load_checkpoint(checkpoint, _expected_kind(cfg.arch))
    frames, _ = load_dataset(data)
    seeds = [cfg.seed + i for i in range(cfg.seeds)]

    conditions = {"clean": evaluate_seeds(model, frames, seeds)}
    if cfg.ambient:
        conditions["ambient"] = evaluate_seeds(model, frames, seeds, cfg.ambient)

    header = _class_header(frames.class_names, model.spec.num_classes)
    write_csv(
        cfg.out / CONFUSION_FILE,
        header,
        _confusion_rows(conditions["clean"].confusion.counts),
    )
    if "ambient" in conditions:
        write_csv(
            cfg.out / f"ambient_{CONFUSION_FILE}",
            header,
            _confusion_rows(conditions["ambient"].confusion.counts),
        )

    report = _provenance(cfg)
    report.update(
        {
            "model": model.spec.name.value,
            "test_frames": len(frames),
            "seeds": seeds,
            "ambient_lambda": cfg.ambient,
            "conditions": {
                name: {
                    "accuracies": sweep.accuracies,
                    "mean_accuracy": sweep.mean,
                    "std_accuracy": sweep.std,
                    "per_class_accuracy": dict(
                        zip(header, sweep.confusion.per_class_accuracy())
                    ),
                    "spike_rates": sweep.spike_rates,
                }
                for name, sweep in conditions.items()
            },
        }
    )
    return emit_report(cfg, METRICS_FILE, report)


def cmd_profile(cfg: RunConfig) -> Path:
    """Measure spike rates, count FLOPs and time per-image inference."""
    checkpoint = _require(cfg.checkpoint, "--checkpoint", cfg.command)
    data = _require(cfg.data, "--data", cfg.command)
    model = load_checkpoint(checkpoint, _expected_kind(cfg.arch))
    frames, _ = load_dataset(data)

    result = evaluate(model, frames, cfg.ambient, seed=cfg.seed)
    encoder = np.random.default_rng(cfg.seed)

    def run() -> None:
        for start in range(0, len(frames), EVAL_BATCH_SIZE):
            inputs = preprocess_counts(
                frames.counts[start : start + EVAL_BATCH_SIZE],
                spiking=model.spec.is_spiking,
                timesteps=model.spec.timesteps,
                rng=encoder,
            )
            model.scores(inputs)
        model.reset_states()

    seconds = time_inference(run, len(frames))
    profile = build_profile(model.spec, result.spike_rates, seconds)

    write_csv(
        cfg.out / PROFILE_CSV_FILE, ["layer", "slots", "r", "flops"], profile.rows()
    )
    report = _provenance(cfg)
    report.update(profile.to_dict())
    report["accuracy"] = result.accuracy
    report["total_flops"] = profile.total
    if cfg.report_format is ReportFormat.CSV:
        return emit_report(cfg, PROFILE_SUMMARY_FILE, report)
    return emit_report(cfg, PROFILE_FILE, report)


def cmd_import(cfg: RunConfig) -> Path:
    """Convert a released dataset copy into a native dataset directory."""
    source = _require(cfg.source, "--src", cfg.command)
    frames, manifest = import_released(source, cfg.split_name)
    save_dataset(cfg.out, frames, manifest)
    return cfg.out


COMMANDS = {
    Command.SYNTH: cmd_synth,
    Command.TRAIN: cmd_train,
    Command.EVAL: cmd_eval,
    Command.PROFILE: cmd_profile,
    Command.IMPORT: cmd_import,
}


def _setup_logging(verbose: bool, debug: bool) -> None:
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command; return the process exit status."""
    arguments = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(arguments)
        _setup_logging(args.verbose, args.debug)
        cfg = resolve_config(args, arguments)
        output = COMMANDS[cfg.command](cfg)
    except SpadGestureError as err:
        LOGGER.error("%s", err)
        return err.exit_code
    except Exception:
        LOGGER.exception("Unexpected error")
        return EXIT_USAGE
    LOGGER.info("%s finished: %s", cfg.command.value, output)
    return EXIT_OK
