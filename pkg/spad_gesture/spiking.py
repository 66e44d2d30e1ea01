"""Integrate-and-Fire dynamics, surrogate gradients and Poisson spike encoding."""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .const import (
    DEFAULT_SURROGATE_ALPHA,
    DEFAULT_TIMESTEPS,
    DEFAULT_V_RESET,
    DEFAULT_V_THRESHOLD,
    LOGGER,
)
from .errors import ContractError, DimensionError, DomainError
from .tensor import Tensor, add, as_tensor, record_op, scale


class TemporalNetwork(Protocol):
    """Network interface needed to unroll over timesteps."""

    @property
    def dirty(self) -> bool:
        """Return True when any layer holds state from an earlier step."""

    def forward(self, x: Tensor) -> Tensor:
        """Run one timestep."""

    def reset_states(self) -> None:
        """Return every stateful layer to its resting state."""


@dataclass(frozen=True)
class SurrogateConfig:
    """Slope of the sigmoid whose derivative stands in for dS/dH."""

    alpha: float = DEFAULT_SURROGATE_ALPHA

    def __post_init__(self) -> None:
        """Validate the slope parameter."""
        if not math.isfinite(self.alpha) or self.alpha <= 0:
            raise DomainError(
                f"surrogate alpha must be finite and positive, got {self.alpha}"
            )


def surrogate_spike_grad(
    u: float | np.ndarray, cfg: SurrogateConfig = SurrogateConfig()
) -> float | np.ndarray:
    """Return alpha * sigmoid(alpha u) * (1 - sigmoid(alpha u)).

    Written through tanh so the result is exactly symmetric in u and saturates
    to zero without overflow.
    """
    t = np.tanh(0.5 * cfg.alpha * np.asarray(u, dtype=np.float64))
    grad = 0.25 * cfg.alpha * (1.0 - t * t)
    if np.ndim(grad) == 0:
        return float(grad)
    return grad


def heaviside_spike(h: Tensor, v_threshold: float, cfg: SurrogateConfig) -> Tensor:
    """Emit 1 where h >= v_threshold; backward uses the sigmoid surrogate."""
    u = h.data - v_threshold
    out = (h.data >= v_threshold).astype(h.data.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * surrogate_spike_grad(u, cfg),)

    return record_op(out, (h,), backward, "spike")


def hard_reset(h: Tensor, spikes: Tensor) -> Tensor:
    """Return H where silent and the reset value 0 where a spike fired."""
    keep = 1 - spikes.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g * keep, -g * h.data

    return record_op(h.data * keep, (h, spikes), backward, "hard_reset")


@dataclass
class IFState:
    """Membrane potentials of one Integrate-and-Fire population."""

    v: Tensor
    v_threshold: float = DEFAULT_V_THRESHOLD
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self) -> None:
        """Validate the firing threshold."""
        if not math.isfinite(self.v_threshold) or self.v_threshold <= 0:
            raise DomainError(f"V_th must be positive, got {self.v_threshold}")

    @classmethod
    def resting(
        cls,
        shape: tuple[int, ...],
        *,
        v_threshold: float = DEFAULT_V_THRESHOLD,
        surrogate: SurrogateConfig | None = None,
        dtype: np.dtype | type = np.float64,
    ) -> IFState:
        """Return a population at the reset potential."""
        return cls(
            Tensor(np.full(shape, DEFAULT_V_RESET, dtype=dtype)),
            v_threshold,
            surrogate or SurrogateConfig(),
        )

    def reset(self) -> None:
        """Set every potential back to the reset value."""
        self.v = Tensor(np.full(self.v.shape, DEFAULT_V_RESET, dtype=self.v.data.dtype))


def if_step(state: IFState, x: Tensor | np.ndarray) -> Tensor:
    """Charge H = V + X, fire where H >= V_th, hard-reset fired neurons to 0."""
    current = as_tensor(x)
    if current.shape != state.v.shape:
        raise DimensionError(
            f"if_step: input shape {current.shape} does not match potential shape "
            f"{state.v.shape}"
        )
    charged = add(state.v, current)
    spikes = heaviside_spike(charged, state.v_threshold, state.surrogate)
    state.v = hard_reset(charged, spikes)
    return spikes


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """T binary frames encoding one image (or one batch of images)."""

    frames: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        """Validate binarity and frame count."""
        if not self.frames:
            raise DomainError("a spike train needs at least one timestep")
        for frame in self.frames:
            if not np.all((frame == 0) | (frame == 1)):
                raise DomainError("spike train frames must be binary")

    @property
    def timesteps(self) -> int:
        """Return T."""
        return len(self.frames)

    def accumulated(self) -> np.ndarray:
        """Return per-pixel spike counts summed over all timesteps."""
        return np.sum(np.stack(self.frames), axis=0)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)


def poisson_encode(
    image: np.ndarray,
    timesteps: int = DEFAULT_TIMESTEPS,
    rng: np.random.Generator | None = None,
    *,
    dtype: np.dtype | type = np.float64,
) -> SpikeTrain:
    """Rate-code intensities in [0, 1]: each pixel fires with probability x per step."""
    intensities = np.asarray(image, dtype=np.float64)
    if timesteps < 1:
        raise DomainError(f"timesteps must be at least 1, got {timesteps}")
    if not np.all(np.isfinite(intensities)):
        raise DomainError("poisson_encode: non-finite intensity")
    if intensities.size and (intensities.min() < 0 or intensities.max() > 1):
        raise DomainError(
            f"poisson_encode: intensities must lie in [0, 1], got range "
            f"[{intensities.min()}, {intensities.max()}]"
        )
    if rng is None:
        rng = np.random.default_rng()
    draws = rng.random((timesteps, *intensities.shape)) < intensities
    return SpikeTrain(tuple(draws.astype(dtype)))


def run_temporal(
    network: TemporalNetwork, train: SpikeTrain
) -> tuple[list[Tensor], Tensor]:
    """Feed each frame through the network, returning outputs and the mean rate."""
    if network.dirty:
        raise ContractError("run_temporal: network state was not reset")
    outputs: list[Tensor] = []
    for t, frame in enumerate(train.frames):
        outputs.append(network.forward(Tensor(frame)))
        LOGGER.debug("Timestep %s output spikes %s", t, outputs[-1].data.sum())
    total = outputs[0]
    for output in outputs[1:]:
        total = add(total, output)
    return outputs, scale(total, 1.0 / train.timesteps)


def reset_states(network: TemporalNetwork) -> None:
    """Return every Integrate-and-Fire population of network to rest."""
    network.reset_states()
