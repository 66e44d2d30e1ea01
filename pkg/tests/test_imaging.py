"""Tests for frame normalization, bicubic upsampling and ambient light."""

from __future__ import annotations

import math

import numpy as np
import pytest

from spad_gesture.const import UPSAMPLED_SIZE
from spad_gesture.errors import DimensionError, DomainError, ValidationError
from spad_gesture.imaging import (
    Frame,
    bicubic_resize,
    bicubic_weights,
    inject_ambient,
    inject_ambient_counts,
    keys_kernel,
    normalize,
    normalize_counts,
    preprocess_counts,
    upsample_counts,
)
from spad_gesture.spiking import SpikeTrain


def _kernel_sum_resize(image: np.ndarray, out_size: int) -> np.ndarray:
    """Resize by summing the cubic kernel over the 4 x 4 neighbourhood."""
    size = image.shape[-1]
    ratio = size / out_size
    out = np.zeros((*image.shape[:-2], out_size, out_size))
    for i in range(out_size):
        sy = (i + 0.5) * ratio - 0.5
        for j in range(out_size):
            sx = (j + 0.5) * ratio - 0.5
            value = 0.0
            for m in range(math.floor(sy) - 1, math.floor(sy) + 3):
                for n in range(math.floor(sx) - 1, math.floor(sx) + 3):
                    row, col = min(max(m, 0), size - 1), min(max(n, 0), size - 1)
                    sample = image[..., row, col]
                    value = value + sample * keys_kernel(sy - m) * keys_kernel(sx - n)
            out[..., i, j] = value
    return out


def test_keys_kernel_values() -> None:
    """The kernel interpolates (1 at 0, 0 at other integers)."""
    at_integers = keys_kernel(np.array([0.0, 1.0, 2.0, 3.0]))

    np.testing.assert_allclose(at_integers, [1, 0, 0, 0])
    assert float(keys_kernel(0.5)) == pytest.approx(0.5625)
    assert float(keys_kernel(1.5)) == pytest.approx(-0.0625)


def test_bicubic_weights_partition_unity() -> None:
    """Every destination row of the resampling matrix sums to one."""
    weights = bicubic_weights(8, UPSAMPLED_SIZE)

    assert weights.shape == (UPSAMPLED_SIZE, 8)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)


def test_bicubic_resize_matches_kernel_sum() -> None:
    """The separable resize equals direct kernel summation on random images."""
    images = np.random.default_rng(5).random((100, 8, 8))

    np.testing.assert_allclose(
        bicubic_resize(images, UPSAMPLED_SIZE, UPSAMPLED_SIZE),
        _kernel_sum_resize(images, UPSAMPLED_SIZE),
        rtol=0,
        atol=1e-10,
    )


def test_bicubic_resize_preserves_constants() -> None:
    """A constant image stays constant."""
    out = bicubic_resize(np.full((8, 8), 0.7), UPSAMPLED_SIZE, UPSAMPLED_SIZE)

    np.testing.assert_allclose(out, 0.7)


def test_bicubic_resize_reproduces_ramp_interior() -> None:
    """Away from the border a linear ramp is reproduced exactly."""
    ramp = np.tile(np.arange(8, dtype=float), (8, 1))

    out = bicubic_resize(ramp, UPSAMPLED_SIZE, UPSAMPLED_SIZE)

    for j in range(UPSAMPLED_SIZE):
        sx = (j + 0.5) * 8 / UPSAMPLED_SIZE - 0.5
        if 1 <= math.floor(sx) <= 5:
            np.testing.assert_allclose(out[:, j], sx, atol=1e-12)


def test_bicubic_resize_batches_leading_axes() -> None:
    """Leading axes are treated as a batch."""
    images = np.random.default_rng(2).random((3, 1, 8, 8))

    out = bicubic_resize(images, 25, 25)

    assert out.shape == (3, 1, 25, 25)
    np.testing.assert_allclose(out[1, 0], bicubic_resize(images[1, 0], 25, 25))


def test_bicubic_resize_rejects_tiny_source() -> None:
    """Sources smaller than 2 x 2 cannot be resampled."""
    with pytest.raises(DimensionError):
        bicubic_resize(np.zeros((1, 8)), 25, 25)


def test_normalize_scales_by_frame_maximum() -> None:
    """The brightest pixel becomes 1."""
    counts = np.zeros((8, 8), dtype=int)
    counts[2, 3] = 40
    counts[5, 5] = 10

    out = normalize(Frame(counts, 0))

    assert out.max() == 1.0
    assert out[5, 5] == pytest.approx(0.25)


def test_normalize_keeps_dark_frames_dark() -> None:
    """An all-zero frame stays zero instead of dividing by zero."""
    out = normalize_counts(np.zeros((2, 8, 8), dtype=int))

    assert not np.any(out)


def test_normalize_counts_is_per_frame() -> None:
    """Each frame of a stack uses its own maximum."""
    stack = np.stack([np.full((8, 8), 2), np.full((8, 8), 9)])

    out = normalize_counts(stack)

    np.testing.assert_allclose(out, 1.0)


@pytest.mark.parametrize(
    "counts",
    [np.zeros((7, 8)), np.full((8, 8), -1), np.full((8, 8), 0.5)],
)
def test_frame_validation(counts) -> None:
    """Frames must be 8 x 8 non-negative integers."""
    with pytest.raises(ValidationError):
        Frame(counts)


def test_frame_counts_are_read_only() -> None:
    """A frame's counts cannot be modified in place."""
    frame = Frame(np.ones((8, 8), dtype=int), 3)

    with pytest.raises(ValueError):
        frame.counts[0, 0] = 5


def test_inject_ambient_adds_poisson_pedestal() -> None:
    """The mean count should rise by lambda."""
    counts = np.zeros((1000, 8, 8), dtype=int)

    out = inject_ambient_counts(counts, 200.0, np.random.default_rng(0))

    assert out.mean() == pytest.approx(200.0, abs=1.0)
    assert np.all(out >= 0)


def test_inject_ambient_zero_rate_is_identity() -> None:
    """lambda = 0 leaves the frame unchanged."""
    frame = Frame(np.arange(64).reshape(8, 8), 2)

    assert inject_ambient(frame, 0.0, np.random.default_rng(0)) == frame


@pytest.mark.parametrize("rate", [-1.0, math.inf])
def test_inject_ambient_rejects_bad_rate(rate) -> None:
    """The ambient rate must be finite and non-negative."""
    with pytest.raises(DomainError):
        inject_ambient_counts(np.zeros((8, 8)), rate, np.random.default_rng(0))


def test_upsample_counts_shape_and_range() -> None:
    """Upsampled frames are [B, 1, 25, 25] probabilities."""
    counts = np.random.default_rng(4).poisson(30, size=(3, 8, 8))
    counts[0] = 0
    counts[1, 4, 4] = 1000

    out = upsample_counts(counts)

    assert out.shape == (3, 1, UPSAMPLED_SIZE, UPSAMPLED_SIZE)
    assert out.min() >= 0.0
    assert out.max() <= 1.0
    assert not np.any(out[0])


def test_preprocess_counts_for_cnn_and_snn() -> None:
    """CNNs get float32 images, spiking models get a T-step spike train."""
    counts = np.random.default_rng(6).poisson(20, size=(2, 8, 8))

    image = preprocess_counts(counts, spiking=False, timesteps=8)
    train = preprocess_counts(
        counts, spiking=True, timesteps=5, rng=np.random.default_rng(0)
    )

    assert isinstance(image, np.ndarray)
    assert image.dtype == np.float32
    assert image.shape == (2, 1, 25, 25)
    assert isinstance(train, SpikeTrain)
    assert train.timesteps == 5
    assert train.frames[0].shape == (2, 1, 25, 25)
