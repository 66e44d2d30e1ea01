"""Photon-count frames: normalization, bicubic upsampling and ambient light."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from .const import BICUBIC_A, FRAME_SIZE, LOGGER, UPSAMPLED_SIZE
from .errors import DimensionError, DomainError, ValidationError
from .spiking import SpikeTrain, poisson_encode


@dataclass(frozen=True, eq=False)
class Frame:
    """One 8x8 grid of photon counts with an optional class label."""

    counts: np.ndarray
    label: int | None = None

    def __post_init__(self) -> None:
        """Validate the grid and freeze the counts."""
        counts = np.array(self.counts)
        if counts.shape != (FRAME_SIZE, FRAME_SIZE):
            raise ValidationError(
                f"frame must be {FRAME_SIZE}x{FRAME_SIZE}, got shape {counts.shape}"
            )
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValidationError("frame counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValidationError("frame counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.counts, other.counts)

    def __hash__(self) -> int:
        return hash((self.label, self.counts.tobytes()))


def normalize(frame: Frame) -> np.ndarray:
    """Divide every count by the frame maximum; an all-zero frame stays zero."""
    return normalize_counts(frame.counts)


def normalize_counts(counts: np.ndarray) -> np.ndarray:
    """Per-frame max normalization of [..., H, W] count grids into [0, 1]."""
    values = np.asarray(counts, dtype=np.float64)
    peak = values.max(axis=(-2, -1), keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    return np.where(peak > 0, values / safe, 0.0)


def keys_kernel(s: np.ndarray | float, a: float = BICUBIC_A) -> np.ndarray:
    """Cubic convolution kernel with parameter a."""
    x = np.abs(np.asarray(s, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=32)
def bicubic_weights(in_size: int, out_size: int, a: float = BICUBIC_A) -> np.ndarray:
    """Return the [out_size, in_size] resampling matrix along one axis.

    Destination pixel centres map to x_src = (x_dst + 0.5) * in/out - 0.5; taps
    outside the source are clamped to the border sample.
    """
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    ratio = in_size / out_size
    for dst in range(out_size):
        src = (dst + 0.5) * ratio - 0.5
        base = math.floor(src)
        frac = src - base
        for offset in range(-1, 3):
            tap = min(max(base + offset, 0), in_size - 1)
            weights[dst, tap] += float(keys_kernel(offset - frac, a))
    weights.flags.writeable = False
    return weights


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the trailing two axes of img with Keys cubic convolution."""
    image = np.asarray(img, dtype=np.float64)
    if image.ndim < 2:
        raise DimensionError(
            f"bicubic_resize: expected an image, got shape {image.shape}"
        )
    height, width = image.shape[-2:]
    if height < 2 or width < 2:
        raise DimensionError(
            f"bicubic_resize: source {height}x{width} smaller than 2x2"
        )
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bicubic_resize: invalid output size {out_h}x{out_w}")
    rows = bicubic_weights(height, out_h)
    cols = bicubic_weights(width, out_w)
    return rows @ image @ cols.T


def inject_ambient(
    frame: Frame, lambda_bg: float, rng: np.random.Generator
) -> Frame:
    """Add an independent Poisson(lambda_bg) background count to every pixel."""
    return Frame(inject_ambient_counts(frame.counts, lambda_bg, rng), frame.label)


def inject_ambient_counts(
    counts: np.ndarray, lambda_bg: float, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised ambient-light pedestal for a stack of count grids."""
    if not math.isfinite(lambda_bg):
        raise DomainError(f"ambient rate must be finite, got {lambda_bg}")
    if lambda_bg < 0:
        raise DomainError(f"ambient rate must be non-negative, got {lambda_bg}")
    values = np.asarray(counts, dtype=np.int64)
    if lambda_bg == 0:
        return values.copy()
    return values + rng.poisson(lambda_bg, size=values.shape)


def upsample_counts(counts: np.ndarray, size: int = UPSAMPLED_SIZE) -> np.ndarray:
    """Normalize, bicubic-upsample and clip a stack of frames into [B, 1, size, size].

    Cubic interpolation can ring outside [0, 1]; the encoder only accepts
    probabilities, so the result is clipped.
    """
    resized = bicubic_resize(normalize_counts(counts), size, size)
    clipped = np.clip(resized, 0.0, 1.0)
    overshoot = int(np.count_nonzero(resized != clipped))
    if overshoot:
        LOGGER.debug("Clipped %s bicubic samples outside [0, 1]", overshoot)
    return clipped[:, None, :, :]


def preprocess_counts(
    counts: np.ndarray,
    *,
    spiking: bool,
    timesteps: int,
    rng: np.random.Generator | None = None,
    ambient: float | None = None,
    ambient_rng: np.random.Generator | None = None,
    dtype: Any = np.float32,
) -> np.ndarray | SpikeTrain:
    """Run the input pipeline for a batch of raw count grids.

    Ambient light (when requested) is injected on raw counts before
    normalization. Spiking models receive a Poisson spike train over the
    upsampled image; the CNN receives the upsampled image itself.
    """
    stack = np.asarray(counts, dtype=np.int64)
    if ambient:
        stack = inject_ambient_counts(
            stack, ambient, ambient_rng or np.random.default_rng()
        )
    images = upsample_counts(stack)
    if not spiking:
        return images.astype(dtype)
    return poisson_encode(images, timesteps, rng, dtype=dtype)
