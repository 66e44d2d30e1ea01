"""Gesture datasets: native files, released-copy import, synthesis and splits."""

from __future__ import annotations

import csv
import math
import re
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .config import MANIFEST_SCHEMA, SYNTH_CONFIG_SCHEMA, load_json_file, validate
from .const import (
    DATASET_VERSION,
    DEFAULT_CLASS_NAMES,
    DEFAULT_SYNTH_BACKGROUND,
    DEFAULT_SYNTH_PHOTON_BUDGET,
    DEFAULT_SYNTH_ROTATION,
    FRAME_SIZE,
    FRAMES_FILE,
    LOGGER,
    MANIFEST_FILE,
    RELEASED_TEST_FRAMES,
    RELEASED_TRAIN_FRAMES,
    SYNTH_RENDER_SIZE,
    DatasetSource,
)
from .errors import (
    DataError,
    DomainError,
    FormatError,
    ImportLayoutError,
    LabelIndexError,
    ParseError,
    ValidationError,
)
from .imaging import Frame
from .reporting import atomic_write_text, csv_text, report_text

CELL_COLUMNS = [
    f"c{row}{col}" for row in range(FRAME_SIZE) for col in range(FRAME_SIZE)
]
CSV_HEADER = ["label", *CELL_COLUMNS]

RELEASED_SUFFIXES = (".csv", ".txt", ".npy")
NO_GESTURE_DIRS = ("none", "no_gesture", "nogesture", "background", "empty")
RELEASED_LAYOUT = (
    "<root>/<class>/<frames>.{csv,txt,npy}  or  "
    "<root>/{train,test}/<class>/<frames>.{csv,txt,npy}; each file holds one or "
    "more 8x8 photon-count grids (64 integers per frame)"
)


@dataclass(frozen=True)
class DatasetManifest:
    """Provenance and per-class frame counts of a dataset directory."""

    version: int
    class_names: tuple[str, ...]
    frame_counts: tuple[int, ...]
    seed: int | None
    source: DatasetSource

    def __post_init__(self) -> None:
        """Validate class and count invariants."""
        if len(self.class_names) < 2:
            raise ValidationError("a dataset needs at least 2 classes")
        if len(self.frame_counts) != len(self.class_names):
            raise ValidationError(
                f"{len(self.frame_counts)} frame counts for "
                f"{len(self.class_names)} classes"
            )
        if any(count < 0 for count in self.frame_counts):
            raise ValidationError("frame counts must be non-negative")

    @property
    def num_classes(self) -> int:
        """Return K."""
        return len(self.class_names)

    @property
    def total(self) -> int:
        """Return the number of frames across all classes."""
        return sum(self.frame_counts)

    def to_dict(self) -> dict[str, Any]:
        """Return the manifest file form."""
        return {
            "version": self.version,
            "class_names": list(self.class_names),
            "frame_counts": list(self.frame_counts),
            "seed": self.seed,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DatasetManifest:
        """Build a manifest from its file form."""
        valid = validate(MANIFEST_SCHEMA, dict(data), "dataset manifest")
        return cls(
            version=valid["version"],
            class_names=tuple(valid["class_names"]),
            frame_counts=tuple(valid["frame_counts"]),
            seed=valid["seed"],
            source=DatasetSource(valid["source"]),
        )


@dataclass(frozen=True, eq=False)
class FrameSet:
    """Stacked count grids [N, 8, 8] with their labels [N]."""

    counts: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self) -> None:
        """Validate shapes, counts and label range; freeze the arrays."""
        counts = np.asarray(self.counts)
        labels = np.asarray(self.labels)
        if counts.ndim != 3 or counts.shape[1:] != (FRAME_SIZE, FRAME_SIZE):
            raise ValidationError(f"expected [N, 8, 8] counts, got {counts.shape}")
        if labels.shape != (counts.shape[0],):
            raise ValidationError(
                f"{labels.shape} labels for {counts.shape[0]} frames"
            )
        counts = counts.astype(np.int64)
        labels = labels.astype(np.int64)
        if np.any(counts < 0):
            raise ValidationError("frame counts must be non-negative")
        bad = labels[(labels < 0) | (labels >= len(self.class_names))]
        if bad.size:
            raise LabelIndexError(
                f"label {bad[0]} outside [0, {len(self.class_names)})"
            )
        counts.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @classmethod
    def from_frames(
        cls, frames: Sequence[Frame], class_names: Sequence[str] = DEFAULT_CLASS_NAMES
    ) -> FrameSet:
        """Stack labelled frames."""
        if any(frame.label is None for frame in frames):
            raise ValidationError("every frame in a dataset needs a label")
        counts = np.array([frame.counts for frame in frames], dtype=np.int64)
        return cls(
            counts.reshape(len(frames), FRAME_SIZE, FRAME_SIZE),
            np.array([frame.label for frame in frames], dtype=np.int64),
            tuple(class_names),
        )

    @property
    def num_classes(self) -> int:
        """Return K."""
        return len(self.class_names)

    def class_counts(self) -> tuple[int, ...]:
        """Return the number of frames of every class."""
        return tuple(
            int(n) for n in np.bincount(self.labels, minlength=self.num_classes)
        )

    def subset(self, indices: Sequence[int] | np.ndarray) -> FrameSet:
        """Return the frames at indices, in the given order."""
        index = np.asarray(indices, dtype=np.int64)
        return FrameSet(self.counts[index], self.labels[index], self.class_names)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[Frame]:
        for counts, label in zip(self.counts, self.labels):
            yield Frame(counts, int(label))

    def __getitem__(self, index: int) -> Frame:
        return Frame(self.counts[index], int(self.labels[index]))


def make_manifest(
    frames: FrameSet, source: DatasetSource, seed: int | None = None
) -> DatasetManifest:
    """Describe frames with counts derived from their labels."""
    return DatasetManifest(
        DATASET_VERSION, frames.class_names, frames.class_counts(), seed, source
    )


# Native format


def save_dataset(
    path: str | Path, frames: FrameSet, manifest: DatasetManifest | None = None
) -> DatasetManifest:
    """Write frames.csv and manifest into a dataset directory."""
    directory = Path(path)
    if manifest is None:
        manifest = make_manifest(frames, DatasetSource.SYNTHETIC)
    manifest = replace(
        manifest, class_names=frames.class_names, frame_counts=frames.class_counts()
    )
    rows = (
        [int(label), *(int(value) for value in counts.reshape(-1))]
        for counts, label in zip(frames.counts, frames.labels)
    )
    atomic_write_text(directory / FRAMES_FILE, csv_text(CSV_HEADER, rows))
    atomic_write_text(directory / MANIFEST_FILE, report_text(manifest.to_dict()))
    LOGGER.info("Wrote %s frames to %s", len(frames), directory)
    return manifest


def _parse_count(text: str, path: str, line: int, column: str) -> int:
    try:
        value = int(text)
    except ValueError as err:
        raise ParseError(path, line, f"{column} is not an integer: {text!r}") from err
    if value < 0:
        raise ParseError(path, line, f"{column} is negative: {value}")
    return value


def load_dataset(path: str | Path) -> tuple[FrameSet, DatasetManifest]:
    """Read a native dataset directory, returning frames in file order."""
    directory = Path(path)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    manifest_path = directory / MANIFEST_FILE
    frames_path = directory / FRAMES_FILE
    if not manifest_path.is_file():
        raise FormatError(f"{directory} has no {MANIFEST_FILE} file")
    if not frames_path.is_file():
        raise FormatError(f"{directory} has no {FRAMES_FILE} file")
    manifest = DatasetManifest.from_dict(load_json_file(manifest_path))
    num_classes = manifest.num_classes

    name = str(frames_path)
    counts: list[list[int]] = []
    labels: list[int] = []
    with frames_path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ParseError(name, 1, "header must be label,c00..c77")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(
                    name,
                    line,
                    f"expected {len(CSV_HEADER)} fields (label + 64 counts), "
                    f"got {len(row)}",
                )
            label = _parse_count(row[0], name, line, "label")
            if label >= num_classes:
                raise ValidationError(
                    f"{name}:{line}: label {label} outside [0, {num_classes})"
                )
            labels.append(label)
            counts.append(
                [
                    _parse_count(text, name, line, column)
                    for text, column in zip(row[1:], CELL_COLUMNS)
                ]
            )

    frames = FrameSet(
        np.array(counts, dtype=np.int64).reshape(-1, FRAME_SIZE, FRAME_SIZE),
        np.array(labels, dtype=np.int64),
        manifest.class_names,
    )
    if frames.class_counts() != manifest.frame_counts:
        raise ValidationError(
            f"{directory}: manifest counts {list(manifest.frame_counts)} do not "
            f"match {FRAMES_FILE} counts {list(frames.class_counts())}"
        )
    LOGGER.info(
        "Loaded %s frames (%s classes) from %s", len(frames), num_classes, directory
    )
    return frames, manifest


# Released dataset import


def _class_order(name: str) -> tuple[int, str]:
    return (1 if name.lower() in NO_GESTURE_DIRS else 0, name)


def _read_released_file(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        try:
            values = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as err:
            raise ImportLayoutError(f"cannot read {path}: {err}") from err
        values = np.asarray(values)
        if values.size % (FRAME_SIZE * FRAME_SIZE):
            raise ImportLayoutError(
                f"{path} holds {values.size} values, not a multiple of 64"
            )
        if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
            raise ImportLayoutError(f"{path} holds non-integer counts")
        return values.astype(np.int64).reshape(-1, FRAME_SIZE, FRAME_SIZE)

    values: list[int] = []
    for line, text in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        for token in re.split(r"[,;\s]+", text.strip()):
            if token:
                values.append(_parse_count(token, str(path), line, "count"))
    if not values or len(values) % (FRAME_SIZE * FRAME_SIZE):
        raise ImportLayoutError(
            f"{path} holds {len(values)} values, not a multiple of 64"
        )
    return np.array(values, dtype=np.int64).reshape(-1, FRAME_SIZE, FRAME_SIZE)


def import_released(
    path: str | Path, split: str | None = None
) -> tuple[FrameSet, DatasetManifest]:
    """Convert a local copy of the released gesture dataset.

    Class directories are sorted by name with a no-gesture directory placed
    last, so its frames take the highest label.
    """
    root = Path(path)
    if split is not None:
        root = root / split
    if not root.is_dir():
        raise ImportLayoutError(
            f"{root} is not a directory; expected {RELEASED_LAYOUT}"
        )
    class_dirs = sorted(
        (entry for entry in root.iterdir() if entry.is_dir()),
        key=lambda entry: _class_order(entry.name),
    )
    if {entry.name for entry in class_dirs} >= {"train", "test"}:
        raise ImportLayoutError(
            f"{root} holds train/ and test/; import each split separately "
            f"(expected {RELEASED_LAYOUT})"
        )
    if len(class_dirs) < 2:
        raise ImportLayoutError(
            f"{root} has {len(class_dirs)} class directories; expected "
            f"{RELEASED_LAYOUT}"
        )

    stacks: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            entry
            for entry in class_dir.iterdir()
            if entry.is_file() and entry.suffix in RELEASED_SUFFIXES
        )
        if not files:
            raise ImportLayoutError(
                f"class directory {class_dir} holds no frame files; expected "
                f"{RELEASED_LAYOUT}"
            )
        for file in files:
            grids = _read_released_file(file)
            stacks.append(grids)
            labels.append(np.full(len(grids), label, dtype=np.int64))
        LOGGER.debug("Imported class %s from %s files", class_dir.name, len(files))

    frames = FrameSet(
        np.concatenate(stacks),
        np.concatenate(labels),
        tuple(entry.name for entry in class_dirs),
    )
    manifest = make_manifest(frames, DatasetSource.RELEASED)
    for name, count in zip(manifest.class_names, manifest.frame_counts):
        LOGGER.info("Imported %s frames of class %s", count, name)
    if manifest.total not in (RELEASED_TRAIN_FRAMES, RELEASED_TEST_FRAMES):
        LOGGER.warning(
            "Imported %s frames; the released training and test sets hold %s and %s",
            manifest.total,
            RELEASED_TRAIN_FRAMES,
            RELEASED_TEST_FRAMES,
        )
    return frames, manifest


# Synthetic gestures

# Extended fingers per class: thumb, index, middle, ring, pinky.
FINGER_PATTERNS: tuple[tuple[int, ...], ...] = (
    (0, 0, 0, 0, 0),
    (1, 0, 0, 0, 0),
    (0, 1, 0, 0, 0),
    (0, 1, 1, 0, 0),
    (0, 1, 1, 1, 0),
    (0, 1, 1, 1, 1),
    (1, 1, 1, 1, 1),
    (1, 0, 0, 0, 1),
    (1, 1, 0, 0, 0),
    (0, 1, 0, 0, 1),
)

# Finger bars in hand coordinates (y up): base point, direction angle, length.
FINGER_BARS: tuple[tuple[float, float, float, float], ...] = (
    (-0.30, -0.18, 150.0, 0.45),
    (-0.24, 0.02, 95.0, 0.55),
    (-0.08, 0.05, 90.0, 0.62),
    (0.08, 0.04, 87.0, 0.56),
    (0.24, 0.00, 82.0, 0.44),
)
FINGER_WIDTH = 0.13
PALM_CENTER = (0.0, -0.22)
PALM_AXES = (0.38, 0.32)
JITTER_SHIFT = 0.1
JITTER_SCALE = 0.1


@dataclass(frozen=True)
class SyntheticGestureConfig:
    """Procedural hand renderer settings."""

    rotation: float = DEFAULT_SYNTH_ROTATION
    photon_budget: float = DEFAULT_SYNTH_PHOTON_BUDGET
    background: float = DEFAULT_SYNTH_BACKGROUND
    render_size: int = SYNTH_RENDER_SIZE
    seed: int = 0
    class_names: tuple[str, ...] = field(default=DEFAULT_CLASS_NAMES)

    def __post_init__(self) -> None:
        """Validate the renderer settings."""
        if not 0 <= self.rotation <= 180:
            raise ValidationError(f"rotation must lie in [0, 180], got {self.rotation}")
        if not math.isfinite(self.photon_budget) or self.photon_budget <= 0:
            raise ValidationError(
                f"photon budget must be positive, got {self.photon_budget}"
            )
        if not math.isfinite(self.background) or self.background < 0:
            raise ValidationError(
                f"background must be non-negative, got {self.background}"
            )
        if self.render_size < FRAME_SIZE or self.render_size % FRAME_SIZE:
            raise ValidationError(
                f"render size must be a multiple of {FRAME_SIZE}, "
                f"got {self.render_size}"
            )
        if len(self.class_names) != len(FINGER_PATTERNS) + 1:
            raise ValidationError(
                f"synthetic datasets have {len(FINGER_PATTERNS) + 1} classes"
            )

    @classmethod
    def from_overrides(cls, overrides: Mapping[str, Any]) -> SyntheticGestureConfig:
        """Apply validated overrides to the defaults."""
        return cls(**validate(SYNTH_CONFIG_SCHEMA, dict(overrides), "synth config"))


def render_hand(
    pattern: Sequence[int] | None,
    size: int,
    angle: float = 0.0,
    shift: tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
) -> np.ndarray:
    """Rasterize a palm ellipse plus extended finger bars as a boolean mask.

    pattern None renders an empty scene. The angle is in degrees.
    """
    if pattern is None:
        return np.zeros((size, size), dtype=bool)
    axis = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    x, y = np.meshgrid(axis, -axis)
    # Map scene coordinates back into hand coordinates.
    theta = math.radians(angle)
    xs, ys = (x - shift[0]) / scale, (y - shift[1]) / scale
    hx = math.cos(theta) * xs + math.sin(theta) * ys
    hy = -math.sin(theta) * xs + math.cos(theta) * ys

    palm = ((hx - PALM_CENTER[0]) / PALM_AXES[0]) ** 2 + (
        (hy - PALM_CENTER[1]) / PALM_AXES[1]
    ) ** 2 <= 1.0
    mask = palm
    for extended, (bx, by, direction, length) in zip(pattern, FINGER_BARS):
        if not extended:
            continue
        phi = math.radians(direction)
        dx, dy = math.cos(phi), math.sin(phi)
        along = (hx - bx) * dx + (hy - by) * dy
        across = -(hx - bx) * dy + (hy - by) * dx
        bar = (along >= 0) & (along <= length) & (np.abs(across) <= FINGER_WIDTH / 2)
        mask = mask | bar
    return mask


def occupancy(mask: np.ndarray, frame_size: int = FRAME_SIZE) -> np.ndarray:
    """Box-downsample a square mask to frame_size x frame_size coverage fractions."""
    size = mask.shape[0]
    block = size // frame_size
    return (
        mask.reshape(frame_size, block, frame_size, block)
        .mean(axis=(1, 3))
        .astype(np.float64)
    )


def synth_generate(
    cfg: SyntheticGestureConfig, n_per_class: int
) -> tuple[FrameSet, DatasetManifest]:
    """Render n_per_class Poisson-count frames for each of the 11 classes.

    Every class draws from its own child of SeedSequence(cfg.seed), so the
    output for one class does not depend on the others.
    """
    if n_per_class < 1:
        raise DomainError(f"frames per class must be at least 1, got {n_per_class}")
    patterns: list[Sequence[int] | None] = [*FINGER_PATTERNS, None]
    streams = np.random.SeedSequence(cfg.seed).spawn(len(patterns))
    counts = np.empty((len(patterns) * n_per_class, FRAME_SIZE, FRAME_SIZE), np.int64)
    labels = np.repeat(np.arange(len(patterns), dtype=np.int64), n_per_class)

    for label, (pattern, stream) in enumerate(zip(patterns, streams)):
        rng = np.random.default_rng(stream)
        for i in range(n_per_class):
            angle = rng.uniform(-cfg.rotation, cfg.rotation)
            shift = rng.uniform(-JITTER_SHIFT, JITTER_SHIFT, size=2)
            scale = rng.uniform(1.0 - JITTER_SCALE, 1.0 + JITTER_SCALE)
            cover = occupancy(
                render_hand(pattern, cfg.render_size, angle, tuple(shift), scale)
            )
            expected = np.full(cover.shape, cfg.background)
            if cover.sum() > 0:
                expected += cfg.photon_budget * cover / cover.sum()
            counts[label * n_per_class + i] = rng.poisson(expected)

    frames = FrameSet(counts, labels, cfg.class_names)
    LOGGER.info(
        "Generated %s synthetic frames (%s per class, seed %s)",
        len(frames),
        n_per_class,
        cfg.seed,
    )
    return frames, make_manifest(frames, DatasetSource.SYNTHETIC, cfg.seed)


# Splits


def split(frames: FrameSet, ratio: float, seed: int) -> tuple[FrameSet, FrameSet]:
    """Stratified shuffle-split: each class contributes round(ratio * n) to part A.

    Both parts keep the input's file order.
    """
    if not 0 < ratio < 1:
        raise DomainError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    part_a: list[np.ndarray] = []
    part_b: list[np.ndarray] = []
    for label, name in enumerate(frames.class_names):
        members = np.flatnonzero(frames.labels == label)
        if members.size == 0:
            continue
        if members.size < 2:
            raise DataError(
                f"class {name} has {members.size} frame; both split parts need one"
            )
        shuffled = rng.permutation(members)
        n_a = min(max(int(round(ratio * members.size)), 1), members.size - 1)
        part_a.append(shuffled[:n_a])
        part_b.append(shuffled[n_a:])
    if not part_a:
        raise DataError("cannot split an empty dataset")
    return (
        frames.subset(np.sort(np.concatenate(part_a))),
        frames.subset(np.sort(np.concatenate(part_b))),
    )
