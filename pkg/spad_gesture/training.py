"""Adam, early stopping, the epoch loop and confusion-matrix evaluation."""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .config import TRAIN_CONFIG_SCHEMA, validate
from .const import (
    DEFAULT_ADAM_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETAS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    DEFAULT_SEED,
    DEFAULT_TIMESTEPS,
    LOGGER,
)
from .data import FrameSet
from .errors import (
    ContractError,
    DataError,
    DimensionError,
    LabelIndexError,
    OptimizerError,
    TrainingError,
    ValidationError,
)
from .imaging import preprocess_counts
from .models import ModelCheckpoint, Network
from .profiling import SpikeRecorder
from .tensor import Tensor, backprop, softmax_cross_entropy

EVAL_BATCH_SIZE = 128
TRAIN_STREAMS = ("init", "shuffle", "encoder", "dropout", "validation")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings."""

    lr: float = DEFAULT_LEARNING_RATE
    betas: tuple[float, float] = DEFAULT_BETAS
    eps_adam: float = DEFAULT_ADAM_EPS
    batch_size: int = DEFAULT_BATCH_SIZE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    seed: int = DEFAULT_SEED
    timesteps: int = DEFAULT_TIMESTEPS

    def __post_init__(self) -> None:
        """Validate ranges."""
        if not math.isfinite(self.lr) or self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if len(self.betas) != 2 or not all(0 <= beta < 1 for beta in self.betas):
            raise ValidationError(f"betas must lie in [0, 1), got {self.betas}")
        if self.eps_adam <= 0:
            raise ValidationError(f"eps_adam must be positive, got {self.eps_adam}")
        for name in ("batch_size", "max_epochs", "patience", "timesteps"):
            if getattr(self, name) < 1:
                raise ValidationError(
                    f"{name} must be at least 1, got {getattr(self, name)}"
                )

    @classmethod
    def from_overrides(
        cls, overrides: Mapping[str, Any] | None = None, base: TrainConfig | None = None
    ) -> TrainConfig:
        """Apply validated overrides on top of base (or the defaults)."""
        valid = validate(TRAIN_CONFIG_SCHEMA, dict(overrides or {}), "train config")
        return replace(base or cls(), **valid)


def training_streams(seed: int) -> dict[str, np.random.Generator]:
    """Return the independent generators a training run draws from."""
    children = np.random.SeedSequence(seed).spawn(len(TRAIN_STREAMS))
    return {
        name: np.random.default_rng(child)
        for name, child in zip(TRAIN_STREAMS, children)
    }


# Optimizer


@dataclass
class AdamMoments:
    """First and second moment estimates per parameter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> AdamMoments:
        """Return zero moments shaped like params."""
        return cls(
            {name: np.zeros_like(value) for name, value in params.items()},
            {name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    moments: AdamMoments,
    cfg: TrainConfig,
    t: int,
) -> tuple[dict[str, np.ndarray], AdamMoments]:
    """One bias-corrected Adam update; inputs are left untouched.

    Every gradient is checked before any parameter moves.
    """
    if t < 1:
        raise ContractError(f"adam_step: step index must be at least 1, got {t}")
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            raise ContractError(f"adam_step: no gradient for parameter {name}")
        if np.shape(grad) != np.shape(value):
            raise DimensionError(
                f"adam_step: gradient shape {np.shape(grad)} does not match "
                f"parameter {name} shape {np.shape(value)}"
            )
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(name)

    beta1, beta2 = cfg.betas
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    updated: dict[str, np.ndarray] = {}
    new_moments = AdamMoments()
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        m = beta1 * moments.m.get(name, 0.0) + (1.0 - beta1) * grad
        v = beta2 * moments.v.get(name, 0.0) + (1.0 - beta2) * grad * grad
        step = cfg.lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps_adam)
        dtype = np.asarray(value).dtype
        updated[name] = (np.asarray(value, dtype=np.float64) - step).astype(dtype)
        new_moments.m[name] = np.asarray(m)
        new_moments.v[name] = np.asarray(v)
    return updated, new_moments


class Adam:
    """Applies adam_step to the trainable tensors of a network."""

    def __init__(self, params: Mapping[str, Tensor], cfg: TrainConfig) -> None:
        """Initialize zero moments for params."""
        self.params = dict(params)
        self.cfg = cfg
        self.t = 0
        self.moments = AdamMoments.zeros(
            {name: tensor.data for name, tensor in self.params.items()}
        )

    def zero_grad(self) -> None:
        """Drop accumulated gradients."""
        for tensor in self.params.values():
            tensor.grad = None

    def step(self) -> None:
        """Update every parameter from its current gradient."""
        self.t += 1
        grads = {
            name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            for name, tensor in self.params.items()
        }
        values = {name: tensor.data for name, tensor in self.params.items()}
        updated, self.moments = adam_step(values, grads, self.moments, self.cfg, self.t)
        for name, tensor in self.params.items():
            tensor.data = updated[name]


# Early stopping


@dataclass
class EarlyStopping:
    """Stops once validation accuracy has not strictly improved for patience epochs."""

    patience: int = DEFAULT_PATIENCE
    best_score: float = -math.inf
    best_epoch: int = 0
    bad_epochs: int = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record an epoch's score; return True when it is a new best."""
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        """Return True once patience is exhausted."""
        return self.bad_epochs >= self.patience


# Evaluation


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predictions."""

    counts: np.ndarray

    @classmethod
    def from_predictions(
        cls,
        labels: Sequence[int] | np.ndarray,
        predictions: Sequence[int] | np.ndarray,
        num_classes: int,
    ) -> ConfusionMatrix:
        """Tally (true, predicted) pairs."""
        truth = np.asarray(labels, dtype=np.int64)
        guess = np.asarray(predictions, dtype=np.int64)
        if truth.shape != guess.shape:
            raise DimensionError(
                f"{truth.shape} labels for {guess.shape} predictions"
            )
        for values in (truth, guess):
            bad = values[(values < 0) | (values >= num_classes)]
            if bad.size:
                raise LabelIndexError(f"label {bad[0]} outside [0, {num_classes})")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (truth, guess), 1)
        return cls(counts)

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        """Return the number of evaluated samples."""
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        """Return trace / total (0 for an empty matrix)."""
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0

    def per_class_accuracy(self) -> list[float]:
        """Return the diagonal over row sums; classes without samples give 0."""
        rows = self.counts.sum(axis=1)
        diagonal = np.diag(self.counts).astype(np.float64)
        return [float(d / r) if r else 0.0 for d, r in zip(diagonal, rows)]

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class EvaluationResult:
    """Accuracy, confusion matrix and spike rates of one evaluation pass."""

    accuracy: float
    confusion: ConfusionMatrix
    spike_rates: dict[str, float]
    seed: int
    ambient: float | None = None


def _batches(n: int, size: int) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _check_dataset(frames: FrameSet, model: Network, what: str) -> None:
    """Reject empty sets and labels the model cannot predict."""
    if len(frames) == 0:
        raise DataError(f"{what} set is empty")
    top = int(frames.labels.max())
    if top >= model.spec.num_classes:
        raise LabelIndexError(
            f"{what} set has label {top}, model predicts "
            f"{model.spec.num_classes} classes"
        )


def _scores(
    model: Network,
    counts: np.ndarray,
    encoder_rng: np.random.Generator,
    ambient: float | None = None,
    ambient_rng: np.random.Generator | None = None,
) -> Tensor:
    inputs = preprocess_counts(
        counts,
        spiking=model.spec.is_spiking,
        timesteps=model.spec.timesteps,
        rng=encoder_rng,
        ambient=ambient,
        ambient_rng=ambient_rng,
    )
    return model.scores(inputs)


def evaluate(
    model: Network,
    test_set: FrameSet,
    ambient: float | None = None,
    *,
    seed: int = DEFAULT_SEED,
    batch_size: int = EVAL_BATCH_SIZE,
) -> EvaluationResult:
    """Predict argmax rates (spiking) or logits (CNN) over test_set.

    The evaluation seed drives the ambient-light and encoder draws through
    independent child streams, so a fixed seed gives a fixed result.
    """
    _check_dataset(test_set, model, "test")
    ambient_seq, encoder_seq = np.random.SeedSequence(seed).spawn(2)
    ambient_rng = np.random.default_rng(ambient_seq)
    encoder_rng = np.random.default_rng(encoder_seq)

    was_training = model.training
    recorder = SpikeRecorder() if model.spec.is_spiking else None
    model.eval()
    model.recorder = recorder
    predictions = []
    try:
        for window in _batches(len(test_set), batch_size):
            scores = _scores(
                model, test_set.counts[window], encoder_rng, ambient, ambient_rng
            )
            predictions.append(np.argmax(scores.data, axis=1))
    finally:
        model.recorder = None
        model.reset_states()
        model.train(was_training)

    confusion = ConfusionMatrix.from_predictions(
        test_set.labels, np.concatenate(predictions), model.spec.num_classes
    )
    rates = recorder.rates() if recorder is not None else {}
    LOGGER.debug(
        "Evaluated %s frames (seed %s, ambient %s): accuracy %.4f",
        len(test_set),
        seed,
        ambient,
        confusion.accuracy,
    )
    return EvaluationResult(confusion.accuracy, confusion, rates, seed, ambient)


@dataclass(frozen=True)
class SeedSweep:
    """Evaluation repeated over encoder seeds."""

    results: tuple[EvaluationResult, ...]

    @property
    def accuracies(self) -> list[float]:
        return [result.accuracy for result in self.results]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def confusion(self) -> ConfusionMatrix:
        """Return the confusion matrix summed over seeds."""
        total = self.results[0].confusion
        for result in self.results[1:]:
            total = total + result.confusion
        return total

    @property
    def spike_rates(self) -> dict[str, float]:
        """Return per-layer rates averaged over seeds."""
        if not self.results[0].spike_rates:
            return {}
        return {
            name: float(np.mean([r.spike_rates[name] for r in self.results]))
            for name in self.results[0].spike_rates
        }


def evaluate_seeds(
    model: Network,
    test_set: FrameSet,
    seeds: Sequence[int],
    ambient: float | None = None,
) -> SeedSweep:
    """Evaluate once per seed."""
    if not seeds:
        raise ContractError("evaluate_seeds needs at least one seed")
    return SeedSweep(
        tuple(evaluate(model, test_set, ambient, seed=seed) for seed in seeds)
    )


# Training loop


@dataclass(frozen=True)
class EpochRecord:
    """One row of the training history."""

    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float

    def as_row(self) -> list[Any]:
        """Return the history.csv row."""
        return [self.epoch, self.train_loss, self.train_acc, self.val_acc]


HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "val_acc"]




def train(
    model: Network,
    train_set: FrameSet,
    val_set: FrameSet,
    cfg: TrainConfig,
) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Train with Adam and early stopping on validation accuracy.

    Returns a snapshot of the best-validation epoch and the full history.
    """
    _check_dataset(train_set, model, "training")
    _check_dataset(val_set, model, "validation")
    if model.spec.is_spiking and model.spec.timesteps != cfg.timesteps:
        model.spec = replace(model.spec, timesteps=cfg.timesteps)

    streams = training_streams(cfg.seed)
    validation_seed = int(streams["validation"].integers(2**32))
    optimizer = Adam(model.named_parameters(), cfg)
    stopper = EarlyStopping(cfg.patience)
    history: list[EpochRecord] = []
    best: ModelCheckpoint | None = None
    model.seed_dropout(streams["dropout"])

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = streams["shuffle"].permutation(len(train_set))
        loss_sum = 0.0
        correct = 0
        for batch, window in enumerate(_batches(len(order), cfg.batch_size)):
            index = order[window]
            scores = _scores(model, train_set.counts[index], streams["encoder"])
            labels = train_set.labels[index]
            loss = softmax_cross_entropy(scores, labels)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"loss diverged to {value} at epoch {epoch} batch {batch}"
                )
            optimizer.zero_grad()
            backprop(loss)
            optimizer.step()
            loss_sum += value * len(index)
            correct += int(np.sum(np.argmax(scores.data, axis=1) == labels))
        model.reset_states()

        val_acc = evaluate(model, val_set, seed=validation_seed).accuracy
        record = EpochRecord(
            epoch, loss_sum / len(train_set), correct / len(train_set), val_acc
        )
        history.append(record)
        LOGGER.info(
            "Epoch %s: loss %.4f train acc %.4f val acc %.4f",
            epoch,
            record.train_loss,
            record.train_acc,
            record.val_acc,
        )
        if stopper.update(epoch, val_acc):
            best = ModelCheckpoint.from_network(
                model,
                {
                    "epoch": epoch,
                    "seed": cfg.seed,
                    "train_accuracy": record.train_acc,
                    "val_accuracy": val_acc,
                },
            )
        if stopper.should_stop:
            LOGGER.info(
                "Stopping after epoch %s; best val acc %.4f at epoch %s",
                epoch,
                stopper.best_score,
                stopper.best_epoch,
            )
            break

    assert best is not None
    return best, history
