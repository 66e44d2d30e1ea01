"""Operation counting for CNN and spiking networks, spike rates and timing.

CNN cost counts two FLOPs per multiply-accumulate. Spiking cost counts one
accumulate per synapse slot, gated by the measured spike rate of the layer's
input: a synaptic layer whose inputs fire r spikes per neuron per sample
(over all timesteps) spends r accumulates per slot.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .const import LOGGER, LayerKind
from .errors import ContractError, DomainError
from .models import ArchitectureSpec, ConvSpec


def mac_conv(
    ch_in: int, k_x: int, k_y: int, h_out: int, w_out: int, ch_out: int
) -> int:
    """Return CH_in x Kx x Ky x H x W x CH_out multiply-accumulates."""
    args = {
        "ch_in": ch_in,
        "k_x": k_x,
        "k_y": k_y,
        "h_out": h_out,
        "w_out": w_out,
        "ch_out": ch_out,
    }
    for name, value in args.items():
        if value < 1:
            raise DomainError(f"mac_conv: {name} must be at least 1, got {value}")
    return ch_in * k_x * k_y * h_out * w_out * ch_out


@dataclass(frozen=True)
class SynapticLayer:
    """Slot count of one conv or fc layer: MACs for a CNN, ACCs for an SNN."""

    name: str
    kind: LayerKind
    slots: int


def synaptic_layers(spec: ArchitectureSpec) -> list[SynapticLayer]:
    """Return the conv and fc layers of spec with their slot counts."""
    layers = []
    for shape in spec.infer_shapes():
        if isinstance(shape.spec, ConvSpec):
            ch_in = shape.input_shape[0]
            ch_out, h_out, w_out = shape.output_shape
            kernel = shape.spec.kernel
            slots = mac_conv(ch_in, kernel, kernel, h_out, w_out, ch_out)
        elif shape.spec.kind is LayerKind.FC:
            slots = shape.input_shape[0] * shape.output_shape[0]
        else:
            continue
        layers.append(SynapticLayer(shape.name, shape.spec.kind, slots))
    return layers


def flops_cnn(spec: ArchitectureSpec) -> int:
    """Return 2 x (sum of conv MACs) + 2 x (sum of fc I x O)."""
    if spec.is_spiking:
        raise ContractError(
            f"flops_cnn: {spec.name.value} is a spiking model, use flops_snn"
        )
    return sum(2 * layer.slots for layer in synaptic_layers(spec))


def flops_snn(spec: ArchitectureSpec, rates: Mapping[str, float]) -> float:
    """Return the sum over synaptic layers of ACC slots x input spike rate."""
    if not spec.is_spiking:
        raise ContractError("flops_snn: cnn models have no spike rates, use flops_cnn")
    total = 0.0
    for layer in synaptic_layers(spec):
        if layer.name not in rates:
            raise ContractError(f"flops_snn: no spike rate for layer {layer.name}")
        rate = float(rates[layer.name])
        if not math.isfinite(rate) or rate < 0:
            raise DomainError(f"flops_snn: invalid spike rate {rate} for {layer.name}")
        total += layer.slots * rate
    return total


@dataclass
class LayerActivity:
    """Spikes entering one synaptic layer, summed over timesteps and samples."""

    name: str
    neurons: int = 0
    spikes: float = 0.0
    samples: int = 0

    @classmethod
    def from_spikes(cls, name: str, spikes: np.ndarray) -> LayerActivity:
        """Build from a [T, B, ...] recording."""
        values = np.asarray(spikes)
        return cls(
            name,
            neurons=math.prod(values.shape[2:]),
            spikes=float(values.sum()),
            samples=values.shape[1],
        )


def measure_spike_rate(activity: LayerActivity) -> float:
    """Total spikes over all timesteps and samples / (neurons x samples)."""
    if activity.samples == 0:
        raise ContractError(
            f"measure_spike_rate: no forward passes recorded for {activity.name}"
        )
    return activity.spikes / (activity.neurons * activity.samples)


@dataclass
class SpikeRecorder:
    """Accumulates the inputs of every synaptic layer during forward passes."""

    layers: dict[str, LayerActivity] = field(default_factory=dict)

    def observe(self, layer: str, values: np.ndarray, *, first_step: bool) -> None:
        """Record one timestep of a layer's input batch."""
        activity = self.layers.setdefault(layer, LayerActivity(layer))
        activity.neurons = math.prod(values.shape[1:])
        activity.spikes += float(values.sum())
        if first_step:
            activity.samples += values.shape[0]

    def rates(self) -> dict[str, float]:
        """Return the measured spike rate of every observed layer."""
        return {
            name: measure_spike_rate(activity)
            for name, activity in self.layers.items()
        }


@dataclass(frozen=True)
class LayerProfile:
    name: str
    kind: LayerKind
    slots: int
    rate: float | None
    flops: float


@dataclass(frozen=True)
class ProfileReport:
    """Per-layer operation counts, totals and the reduction versus a CNN."""

    model: str
    layers: tuple[LayerProfile, ...]
    flops_cnn: int
    flops_snn: float | None
    reduction_percent: float | None
    seconds_per_image: float | None = None

    @property
    def total(self) -> float:
        """Return the total of the model's own per-layer contributions."""
        return sum(layer.flops for layer in self.layers)

    def rows(self) -> list[list[Any]]:
        """Return (layer, slots, r, flops) rows for the CSV form."""
        return [
            [
                layer.name,
                layer.slots,
                "" if layer.rate is None else layer.rate,
                layer.flops,
            ]
            for layer in self.layers
        ]

    def to_dict(self) -> dict[str, Any]:
        """Return the structured-text form."""
        return {
            "model": self.model,
            "layers": [
                {
                    "layer": layer.name,
                    "kind": layer.kind.value,
                    "slots": layer.slots,
                    "rate": layer.rate,
                    "flops": layer.flops,
                }
                for layer in self.layers
            ],
            "flops_cnn": self.flops_cnn,
            "flops_snn": self.flops_snn,
            "reduction_percent": self.reduction_percent,
            "seconds_per_image": self.seconds_per_image,
        }


def build_profile(
    spec: ArchitectureSpec,
    rates: Mapping[str, float] | None = None,
    seconds_per_image: float | None = None,
) -> ProfileReport:
    """Count operations for spec and compare spiking models to their CNN twin."""
    cnn_total = flops_cnn(spec.as_cnn())
    if not spec.is_spiking:
        layers = tuple(
            LayerProfile(layer.name, layer.kind, layer.slots, None, 2.0 * layer.slots)
            for layer in synaptic_layers(spec)
        )
        return ProfileReport(
            spec.name.value, layers, cnn_total, None, None, seconds_per_image
        )

    rates = rates or {}
    snn_total = flops_snn(spec, rates)
    layers = tuple(
        LayerProfile(
            layer.name,
            layer.kind,
            layer.slots,
            float(rates[layer.name]),
            layer.slots * float(rates[layer.name]),
        )
        for layer in synaptic_layers(spec)
    )
    reduction = (1.0 - snn_total / cnn_total) * 100.0
    LOGGER.info(
        "%s: %.0f SNN FLOPs vs %s CNN FLOPs (%.1f%% reduction)",
        spec.name.value,
        snn_total,
        cnn_total,
        reduction,
    )
    return ProfileReport(
        spec.name.value, layers, cnn_total, snn_total, reduction, seconds_per_image
    )


def time_inference(run: Callable[[], object], images: int, repeats: int = 1) -> float:
    """Return the mean wall-clock seconds per image of calling run()."""
    if images < 1 or repeats < 1:
        raise DomainError("time_inference: images and repeats must be positive")
    start = time.perf_counter()
    for _ in range(repeats):
        run()
    elapsed = time.perf_counter() - start
    return elapsed / (images * repeats)
