"""Tests for Adam, early stopping, evaluation and the training loop."""

from __future__ import annotations

from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from spad_gesture.const import DEFAULT_AMBIENT_LAMBDA
from spad_gesture.data import FrameSet, SyntheticGestureConfig, synth_generate
from spad_gesture.errors import (
    ContractError,
    DataError,
    LabelIndexError,
    OptimizerError,
    TrainingError,
    ValidationError,
)
from spad_gesture.models import build_model, default_spec
from spad_gesture.tensor import Tensor
from spad_gesture.training import (
    Adam,
    AdamMoments,
    ConfusionMatrix,
    EarlyStopping,
    TrainConfig,
    adam_step,
    evaluate,
    evaluate_seeds,
    train,
    training_streams,
)


@pytest.fixture
def frames():
    """Return 2 synthetic frames per class."""
    frames, _ = synth_generate(SyntheticGestureConfig(seed=0), 2)
    return frames


@pytest.fixture
def smlp():
    """Return a freshly initialized SMLP."""
    return build_model(default_spec("smlp"), np.random.default_rng(0))


def test_adam_first_step() -> None:
    """The first bias-corrected step moves by lr * g / (|g| + eps)."""
    params = {"w": np.array([0.0, 1.0])}
    grads = {"w": np.array([1.0, -2.0])}

    updated, moments = adam_step(
        params, grads, AdamMoments.zeros(params), TrainConfig(), 1
    )

    np.testing.assert_allclose(
        updated["w"], [-9.99999990e-4, 1.0 + 9.99999995e-4], rtol=1e-9
    )
    np.testing.assert_allclose(moments.m["w"], [0.1, -0.2])
    np.testing.assert_array_equal(params["w"], [0.0, 1.0])


def test_adam_zero_gradient_leaves_parameters() -> None:
    """A zero gradient from zero moments changes nothing."""
    params = {"w": np.array([0.5, -0.5], dtype=np.float32)}

    updated, _ = adam_step(
        params, {"w": np.zeros(2)}, AdamMoments.zeros(params), TrainConfig(), 1
    )

    np.testing.assert_array_equal(updated["w"], params["w"])
    assert updated["w"].dtype == np.float32


def test_adam_rejects_non_finite_gradient() -> None:
    """A NaN gradient names its parameter and moves nothing."""
    params = {"a": np.zeros(2), "b": np.zeros(2)}
    grads = {"a": np.ones(2), "b": np.array([np.nan, 0.0])}

    with pytest.raises(OptimizerError) as err:
        adam_step(params, grads, AdamMoments.zeros(params), TrainConfig(), 1)

    assert err.value.parameter == "b"
    assert "parameter b" in str(err.value)


def test_adam_step_index_starts_at_one() -> None:
    """t = 0 would divide by a zero bias correction."""
    params = {"w": np.zeros(1)}

    with pytest.raises(ContractError):
        adam_step(
            params, {"w": np.ones(1)}, AdamMoments.zeros(params), TrainConfig(), 0
        )


def test_adam_optimizer_updates_tensors() -> None:
    """Adam.step applies the update to the tensor in place."""
    weight = Tensor.parameter([0.0])
    optimizer = Adam({"w": weight}, TrainConfig(lr=0.01))
    weight.grad = np.array([3.0])

    optimizer.step()
    optimizer.zero_grad()

    assert weight.data[0] == pytest.approx(-0.01)
    assert weight.grad is None
    assert optimizer.t == 1


def test_early_stopping_after_patience() -> None:
    """Two improving epochs then twenty flat ones stop at epoch 22."""
    stopper = EarlyStopping(patience=20)
    scores = [0.5, 0.6] + [0.6] * 20
    stopped_at = None

    for epoch, score in enumerate(scores, start=1):
        stopper.update(epoch, score)
        if stopper.should_stop:
            stopped_at = epoch
            break

    assert stopped_at == 22
    assert stopper.best_epoch == 2
    assert stopper.best_score == 0.6


def test_early_stopping_resets_on_improvement() -> None:
    """A strict improvement clears the bad-epoch count."""
    stopper = EarlyStopping(patience=2)

    stopper.update(1, 0.3)
    stopper.update(2, 0.2)
    assert stopper.update(3, 0.4)
    stopper.update(4, 0.4)

    assert not stopper.should_stop


def test_train_config_validation() -> None:
    """Overrides are coerced and range checked."""
    assert TrainConfig.from_overrides({"lr": "0.01"}).lr == 0.01
    assert TrainConfig.from_overrides({"betas": [0.8, 0.9]}).betas == (0.8, 0.9)
    with pytest.raises(ValidationError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValidationError):
        TrainConfig.from_overrides({"momentum": 0.9})


def test_training_streams_are_independent_and_seeded() -> None:
    """Each stream is reproducible from the seed."""
    first = training_streams(5)
    second = training_streams(5)

    assert list(first) == ["init", "shuffle", "encoder", "dropout", "validation"]
    assert first["shuffle"].integers(1000) == second["shuffle"].integers(1000)
    assert first["init"].random() != first["encoder"].random()


def test_confusion_matrix_diagonal() -> None:
    """Perfect predictions fill the diagonal."""
    matrix = ConfusionMatrix.from_predictions([0, 1, 2, 2], [0, 1, 2, 2], 3)

    np.testing.assert_array_equal(matrix.counts, np.diag([1, 1, 2]))
    assert matrix.accuracy == 1.0


def test_confusion_matrix_per_class_accuracy() -> None:
    """Rows are true classes; empty rows give 0."""
    matrix = ConfusionMatrix.from_predictions([0, 0, 1], [0, 1, 1], 3)

    assert matrix.counts[0, 1] == 1
    assert matrix.per_class_accuracy() == [0.5, 1.0, 0.0]
    assert matrix.accuracy == pytest.approx(2 / 3)
    assert (matrix + matrix).total == 6


def test_constant_predictions_score_chance() -> None:
    """Always predicting one class of eleven balanced ones gives 1/11."""
    labels = np.repeat(np.arange(11), 5)

    matrix = ConfusionMatrix.from_predictions(labels, np.zeros_like(labels), 11)

    assert matrix.accuracy == pytest.approx(1 / 11)


def test_confusion_matrix_rejects_bad_labels() -> None:
    """Labels outside [0, K) raise LabelIndexError."""
    with pytest.raises(LabelIndexError):
        ConfusionMatrix.from_predictions([0, 3], [0, 1], 3)


def test_evaluate_is_deterministic_per_seed(smlp, frames) -> None:
    """A fixed seed gives a fixed result and restores the model mode."""
    first = evaluate(smlp, frames, seed=3)
    second = evaluate(smlp, frames, seed=3)

    np.testing.assert_array_equal(first.confusion.counts, second.confusion.counts)
    assert first.spike_rates == second.spike_rates
    assert set(first.spike_rates) == {"fc1", "fc2", "fc3"}
    assert first.confusion.total == len(frames)
    assert smlp.training
    assert not smlp.dirty


def test_evaluate_with_ambient_light(smlp, frames) -> None:
    """Ambient evaluation records its rate."""
    result = evaluate(smlp, frames, ambient=200.0, seed=0)

    assert result.ambient == 200.0
    assert 0.0 <= result.accuracy <= 1.0


def test_evaluate_rejects_labels_beyond_the_model(smlp) -> None:
    """Labels the model cannot predict are rejected before scoring."""
    names = tuple(f"c{index}" for index in range(12))
    frames = FrameSet(np.ones((2, 8, 8), dtype=int), np.array([0, 11]), names)

    with pytest.raises(LabelIndexError):
        evaluate(smlp, frames)


def test_fewer_classes_than_the_model_predicts(smlp) -> None:
    """A two-class dataset trains and evaluates against all eleven outputs."""
    counts = np.random.default_rng(0).poisson(5.0, size=(6, 8, 8))
    frames = FrameSet(counts, np.array([0, 1, 0, 1, 0, 1]), ("a", "b"))

    best, history = train(smlp, frames, frames, TrainConfig(max_epochs=2))
    result = evaluate(best.restore(), frames)

    assert len(history) == 2
    assert result.confusion.counts.shape == (11, 11)
    assert result.confusion.total == 6


def test_cnn_evaluation_has_no_spike_rates(frames) -> None:
    """Only spiking models record spike rates."""
    cnn = build_model(default_spec("cnn"), np.random.default_rng(0))

    assert evaluate(cnn, frames).spike_rates == {}


def test_evaluate_seeds_summarizes_runs(smlp, frames) -> None:
    """The sweep sums confusion matrices and averages rates."""
    sweep = evaluate_seeds(smlp, frames, [0, 1, 2])

    assert len(sweep.accuracies) == 3
    assert sweep.confusion.total == 3 * len(frames)
    assert sweep.mean == pytest.approx(np.mean(sweep.accuracies))
    assert set(sweep.spike_rates) == {"fc1", "fc2", "fc3"}
    with pytest.raises(ContractError):
        evaluate_seeds(smlp, frames, [])


def test_train_stops_early_and_keeps_best_epoch(smlp, frames) -> None:
    """Training halts patience epochs after the best validation score."""
    scores = [0.5, 0.6] + [0.6] * 30
    results = [MagicMock(accuracy=score) for score in scores]

    with patch("spad_gesture.training.evaluate", side_effect=results):
        best, history = train(
            smlp, frames, frames, TrainConfig(max_epochs=50, patience=20)
        )

    assert len(history) == 22
    assert best.metadata["epoch"] == 2
    assert best.metadata["val_accuracy"] == 0.6
    assert [record.epoch for record in history] == list(range(1, 23))


def test_train_changes_weights_and_is_deterministic(frames) -> None:
    """Equal seeds give equal histories and weights."""
    cfg = TrainConfig(max_epochs=2, batch_size=8, seed=1)
    runs = []
    for _ in range(2):
        model = build_model(default_spec("smlp"), np.random.default_rng(0))
        before = model.state_dict()["fc1.weight"].copy()
        best, history = train(model, frames, frames, cfg)
        runs.append((best, history))
        assert not np.array_equal(model.state_dict()["fc1.weight"], before)

    (best_a, history_a), (best_b, history_b) = runs
    assert history_a == history_b
    assert best_a.to_bytes() == best_b.to_bytes()


def test_train_uses_configured_timesteps(frames) -> None:
    """Spiking models run for the configured number of timesteps."""
    model = build_model(default_spec("smlp"), np.random.default_rng(0))

    best, _ = train(model, frames, frames, TrainConfig(max_epochs=1, timesteps=3))

    assert best.spec.timesteps == 3


def test_train_reports_divergence(frames) -> None:
    """A NaN loss stops training with the epoch and batch."""
    model = build_model(default_spec("cnn"), np.random.default_rng(0))
    last = model.layers[-1]
    last.weight.data = np.full(last.weight.shape, np.nan, dtype=np.float32)

    with pytest.raises(TrainingError, match="epoch 1 batch 0"):
        train(model, frames, frames, TrainConfig(max_epochs=1))


def test_train_rejects_empty_sets(smlp, frames) -> None:
    """Both the training and validation sets must hold frames."""
    empty = frames.subset([])

    with pytest.raises(DataError):
        train(smlp, empty, frames, TrainConfig(max_epochs=1))


@pytest.mark.slow
@pytest.mark.parametrize(("arch", "target"), [("scnn", 0.95), ("cnn", 0.99)])
def test_overfits_a_small_synthetic_set(arch, target) -> None:
    """Within 200 epochs a 64-frame set is fit almost perfectly."""
    generated, _ = synth_generate(SyntheticGestureConfig(seed=0), 6)
    frames = generated.subset(np.arange(64))
    model = build_model(default_spec(arch), np.random.default_rng(0))

    _, history = train(
        model, frames, frames, TrainConfig(max_epochs=200, patience=200, seed=0)
    )

    assert max(record.train_acc for record in history) >= target


@pytest.mark.slow
def test_ambient_light_does_not_raise_accuracy() -> None:
    """Averaged over encoder seeds, ambient light never beats clean frames."""
    train_set, _ = synth_generate(SyntheticGestureConfig(seed=3), 30)
    test_set, _ = synth_generate(SyntheticGestureConfig(seed=4), 10)
    model = build_model(default_spec("cnn"), np.random.default_rng(0))
    best, _ = train(model, train_set, train_set, TrainConfig(max_epochs=30))
    trained = best.restore()
    seeds = range(5)

    clean = evaluate_seeds(trained, test_set, seeds).mean
    noisy = evaluate_seeds(trained, test_set, seeds, DEFAULT_AMBIENT_LAMBDA).mean

    assert noisy <= clean


@pytest.mark.slow
def test_smlp_training_lowers_the_loss() -> None:
    """BPTT through the spike layers reduces the training loss."""
    frames, _ = synth_generate(SyntheticGestureConfig(seed=2), 6)
    model = build_model(default_spec("smlp"), np.random.default_rng(0))

    _, history = train(model, frames, frames, TrainConfig(max_epochs=30, patience=30))

    assert history[-1].train_loss < history[0].train_loss
