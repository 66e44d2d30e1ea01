"""Declarative architectures, runtime networks and checkpoint files.

An ``ArchitectureSpec`` is an ordered tuple of frozen layer descriptors. Layer
names are assigned from the kind and a per-kind counter (``conv1``, ``fc2``)
and are used for parameter names, checkpoint blocks and profiling records.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, ClassVar, Protocol

import numpy as np

from .config import (
    ARCHITECTURE_SCHEMA,
    load_architecture_config,
    packaged_architecture,
)
from .config import validate as validate_config
from .const import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DEFAULT_DROPOUT,
    DEFAULT_SURROGATE_ALPHA,
    DEFAULT_TIMESTEPS,
    DEFAULT_V_THRESHOLD,
    INPUT_SHAPE,
    LOGGER,
    NUM_CLASSES,
    LayerKind,
    ModelKind,
)
from .errors import (
    ArchitectureError,
    ContractError,
    IntegrityError,
    ValidationError,
)
from .reporting import atomic_write_bytes
from .spiking import IFState, SpikeTrain, SurrogateConfig, if_step, run_temporal
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    affine,
    batchnorm2d,
    conv2d,
    crop2d,
    flatten,
    maxpool2d,
    mul,
    relu,
    scale,
)

PARAM_DTYPE = np.float32
CHECKPOINT_BLOCK_DTYPE = "<f4"


# Layer descriptors


@dataclass(frozen=True)
class LayerSpec:
    """Base descriptor; subclasses declare their kind and shape rule."""

    kind: ClassVar[LayerKind]
    synaptic: ClassVar[bool] = False

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Return the per-sample output shape for a per-sample input shape."""
        return shape

    def to_dict(self) -> dict[str, Any]:
        """Return the config-file form of this descriptor."""
        return {"type": self.kind.value, **asdict(self)}


def _require_image(shape: tuple[int, ...], what: str) -> None:
    if len(shape) != 3:
        raise ValueError(f"{what} needs a (channels, height, width) input, got {shape}")


@dataclass(frozen=True)
class ConvSpec(LayerSpec):
    """Square-kernel convolution."""

    kind: ClassVar[LayerKind] = LayerKind.CONV
    synaptic: ClassVar[bool] = True

    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        _require_image(shape, "conv")
        _, height, width = shape
        padded_h, padded_w = height + 2 * self.padding, width + 2 * self.padding
        if self.kernel > padded_h or self.kernel > padded_w:
            raise ValueError(
                f"kernel {self.kernel} larger than padded input {padded_h}x{padded_w}"
            )
        return (
            self.out_channels,
            (padded_h - self.kernel) // self.stride + 1,
            (padded_w - self.kernel) // self.stride + 1,
        )


@dataclass(frozen=True)
class BatchNormSpec(LayerSpec):
    kind: ClassVar[LayerKind] = LayerKind.BATCHNORM

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        _require_image(shape, "batchnorm")
        return shape


@dataclass(frozen=True)
class PoolSpec(LayerSpec):
    """Max pooling; odd extents drop the trailing row or column."""

    kind: ClassVar[LayerKind] = LayerKind.POOL

    window: int = 2

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        _require_image(shape, "pool")
        channels, height, width = shape
        if height < self.window or width < self.window:
            raise ValueError(f"window {self.window} larger than {height}x{width}")
        return channels, height // self.window, width // self.window


@dataclass(frozen=True)
class FlattenSpec(LayerSpec):
    kind: ClassVar[LayerKind] = LayerKind.FLATTEN

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return (math.prod(shape),)


@dataclass(frozen=True)
class LinearSpec(LayerSpec):
    """Fully connected layer."""

    kind: ClassVar[LayerKind] = LayerKind.FC
    synaptic: ClassVar[bool] = True

    out_features: int

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(shape) != 1:
            raise ValueError(f"fc needs a flat input, got {shape}")
        return (self.out_features,)


@dataclass(frozen=True)
class DropoutSpec(LayerSpec):
    kind: ClassVar[LayerKind] = LayerKind.DROPOUT

    p: float = DEFAULT_DROPOUT


@dataclass(frozen=True)
class SpikeSpec(LayerSpec):
    """Integrate-and-Fire population."""

    kind: ClassVar[LayerKind] = LayerKind.SPIKE

    v_threshold: float = DEFAULT_V_THRESHOLD
    alpha: float = DEFAULT_SURROGATE_ALPHA


@dataclass(frozen=True)
class ReluSpec(LayerSpec):
    kind: ClassVar[LayerKind] = LayerKind.RELU


LAYER_TYPES: dict[str, type[LayerSpec]] = {
    cls.kind.value: cls
    for cls in (
        ConvSpec,
        BatchNormSpec,
        PoolSpec,
        FlattenSpec,
        LinearSpec,
        DropoutSpec,
        SpikeSpec,
        ReluSpec,
    )
}


@dataclass(frozen=True)
class LayerShape:
    """A named layer with its per-sample input and output shapes."""

    name: str
    spec: LayerSpec
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layer list plus input geometry, class count and timesteps."""

    name: ModelKind
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...] = INPUT_SHAPE
    num_classes: int = NUM_CLASSES
    timesteps: int = DEFAULT_TIMESTEPS

    @property
    def is_spiking(self) -> bool:
        """Return True for SCNN and SMLP specs."""
        return self.name.is_spiking

    def layer_names(self) -> list[str]:
        """Return conv1, batchnorm1, spike1, ... in layer order."""
        counters: dict[LayerKind, int] = {}
        names = []
        for layer in self.layers:
            counters[layer.kind] = counters.get(layer.kind, 0) + 1
            names.append(f"{layer.kind.value}{counters[layer.kind]}")
        return names

    def infer_shapes(self) -> list[LayerShape]:
        """Chain per-sample shapes through every layer.

        Raises ArchitectureError naming the first layer whose input it cannot
        accept.
        """
        shape = tuple(self.input_shape)
        shapes = []
        for name, layer in zip(self.layer_names(), self.layers):
            try:
                out = layer.output_shape(shape)
            except ValueError as err:
                raise ArchitectureError(name, str(err)) from err
            shapes.append(LayerShape(name, layer, shape, out))
            shape = out
        return shapes

    def validate(self) -> list[LayerShape]:
        """Check the shape chain and the spike-layer rules; return the shapes."""
        if not self.layers:
            raise ArchitectureError(self.name.value, "no layers")
        if self.timesteps < 1:
            raise ArchitectureError(
                self.name.value, f"timesteps must be at least 1, got {self.timesteps}"
            )
        shapes = self.infer_shapes()
        final = shapes[-1]
        if final.output_shape != (self.num_classes,):
            raise ArchitectureError(
                final.name,
                f"output shape {final.output_shape} does not match "
                f"{self.num_classes} classes",
            )
        spikes = [s.name for s in shapes if s.spec.kind is LayerKind.SPIKE]
        if self.is_spiking and not spikes:
            raise ArchitectureError(self.name.value, "spiking model has no spike layer")
        if not self.is_spiking and spikes:
            raise ArchitectureError(spikes[0], "cnn model cannot contain spike layers")
        return shapes

    def as_cnn(self) -> ArchitectureSpec:
        """Return the same topology with ReLU in place of spike layers.

        A trailing output spike layer is dropped so the CNN ends in logits.
        """
        if not self.is_spiking:
            return self
        layers = list(self.layers)
        if layers and layers[-1].kind is LayerKind.SPIKE:
            layers.pop()
        return replace(
            self,
            name=ModelKind.CNN,
            layers=tuple(
                ReluSpec() if layer.kind is LayerKind.SPIKE else layer
                for layer in layers
            ),
        )

    def to_dict(self) -> dict[str, Any]:
        """Return the config-file form of this spec."""
        return {
            "name": self.name.value,
            "layers": [layer.to_dict() for layer in self.layers],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "timesteps": self.timesteps,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ArchitectureSpec:
        """Build a spec from its config-file form."""
        valid = validate_config(ARCHITECTURE_SCHEMA, dict(data), "architecture")
        layers = []
        for entry in valid["layers"]:
            params = {key: value for key, value in entry.items() if key != "type"}
            layers.append(LAYER_TYPES[entry["type"]](**params))
        return cls(
            name=ModelKind(valid["name"]),
            layers=tuple(layers),
            input_shape=tuple(valid["input_shape"]),
            num_classes=valid["num_classes"],
            timesteps=valid["timesteps"],
        )

    @classmethod
    def load(cls, path: str | Path) -> ArchitectureSpec:
        """Load an architecture config file (or a shipped default by name)."""
        return cls.from_dict(load_architecture_config(path))


def default_spec(kind: ModelKind | str) -> ArchitectureSpec:
    """Return the shipped default spec for a model family."""
    value = kind.value if isinstance(kind, ModelKind) else kind
    return ArchitectureSpec.from_dict(packaged_architecture(value))


# Runtime layers


class ActivityRecorder(Protocol):
    """Observer of the tensors entering synaptic layers."""

    def observe(self, layer: str, values: np.ndarray, *, first_step: bool) -> None:
        """Record the input of one synaptic layer for one timestep."""


def _kaiming_uniform(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int
) -> tuple[Tensor, Tensor]:
    weight_bound = math.sqrt(6.0 / fan_in)
    bias_bound = 1.0 / math.sqrt(fan_in)
    weight = rng.uniform(-weight_bound, weight_bound, size=shape)
    bias = rng.uniform(-bias_bound, bias_bound, size=shape[0])
    return (
        Tensor.parameter(weight, dtype=PARAM_DTYPE),
        Tensor.parameter(bias, dtype=PARAM_DTYPE),
    )


class Layer:
    """Runtime layer: forward rule, trainable tensors and buffers."""

    def __init__(self, name: str, spec: LayerSpec) -> None:
        """Initialize with the layer name and its descriptor."""
        self.name = name
        self.spec = spec

    @property
    def synaptic(self) -> bool:
        """Return True for layers that hold synapses (conv, fc)."""
        return self.spec.synaptic

    @property
    def dirty(self) -> bool:
        """Return True when the layer carries state from an earlier step."""
        return False

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        """Apply the layer to a batch."""
        raise NotImplementedError

    def parameters(self) -> dict[str, Tensor]:
        """Return trainable tensors keyed by local name."""
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        """Return non-trainable state saved in checkpoints."""
        return {}

    def load_buffer(self, key: str, value: np.ndarray) -> None:
        """Replace one buffer."""
        raise KeyError(key)

    def reset(self) -> None:
        """Drop per-sequence state."""


class Conv2d(Layer):
    def __init__(
        self, name: str, spec: ConvSpec, in_channels: int, rng: np.random.Generator
    ) -> None:
        super().__init__(name, spec)
        self.conv = spec
        shape = (spec.out_channels, in_channels, spec.kernel, spec.kernel)
        self.weight, self.bias = _kaiming_uniform(
            rng, shape, in_channels * spec.kernel * spec.kernel
        )

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.conv.stride, self.conv.padding)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class BatchNorm2d(Layer):
    def __init__(self, name: str, spec: BatchNormSpec, channels: int) -> None:
        super().__init__(name, spec)
        self.gamma = Tensor.parameter(np.ones(channels), dtype=PARAM_DTYPE)
        self.beta = Tensor.parameter(np.zeros(channels), dtype=PARAM_DTYPE)
        self.state = BatchNormState.create(channels, PARAM_DTYPE)

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        return batchnorm2d(x, self.gamma, self.beta, self.state, training=training)

    def parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            "running_mean": self.state.running_mean,
            "running_var": self.state.running_var,
        }

    def load_buffer(self, key: str, value: np.ndarray) -> None:
        if key == "running_mean":
            self.state.running_mean = value.astype(PARAM_DTYPE)
        elif key == "running_var":
            self.state.running_var = value.astype(PARAM_DTYPE)
        else:
            raise KeyError(key)


class MaxPool2d(Layer):
    def __init__(self, name: str, spec: PoolSpec) -> None:
        super().__init__(name, spec)
        self.window = spec.window

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        height, width = x.shape[2], x.shape[3]
        keep_h = height - height % self.window
        keep_w = width - width % self.window
        if (keep_h, keep_w) != (height, width):
            x = crop2d(x, keep_h, keep_w)
        return maxpool2d(x, self.window)


class Flatten(Layer):
    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        return flatten(x)


class Linear(Layer):
    def __init__(
        self,
        name: str,
        spec: LinearSpec,
        in_features: int,
        rng: np.random.Generator,
    ) -> None:
        super().__init__(name, spec)
        self.weight, self.bias = _kaiming_uniform(
            rng, (spec.out_features, in_features), in_features
        )

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        return affine(x, self.weight, self.bias)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class Dropout(Layer):
    """Inverted dropout whose mask persists until reset.

    Spiking networks see the same mask at every timestep of a sequence.
    """

    def __init__(self, name: str, spec: DropoutSpec, rng: np.random.Generator) -> None:
        super().__init__(name, spec)
        self.p = spec.p
        self.rng = rng
        self.mask: np.ndarray | None = None

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        if not training or self.p == 0:
            return x
        if self.mask is None or self.mask.shape != x.shape:
            keep = self.rng.random(x.shape) >= self.p
            self.mask = (keep / (1.0 - self.p)).astype(x.data.dtype)
        return mul(x, self.mask)

    def reset(self) -> None:
        self.mask = None


class ReLU(Layer):
    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        return relu(x)


class IFNeuron(Layer):
    """Integrate-and-Fire population sized lazily from its first input."""

    def __init__(self, name: str, spec: SpikeSpec) -> None:
        super().__init__(name, spec)
        self.v_threshold = spec.v_threshold
        self.surrogate = SurrogateConfig(spec.alpha)
        self.state: IFState | None = None

    @property
    def dirty(self) -> bool:
        return self.state is not None

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        if self.state is None:
            self.state = IFState.resting(
                x.shape,
                v_threshold=self.v_threshold,
                surrogate=self.surrogate,
                dtype=x.data.dtype,
            )
        return if_step(self.state, x)

    def reset(self) -> None:
        self.state = None


@dataclass(eq=False)
class Network:
    """A built architecture: ordered runtime layers and a train/eval mode."""

    spec: ArchitectureSpec
    layers: list[Layer]
    training: bool = True
    recorder: ActivityRecorder | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    _steps: int = 0
    _readout: list[Tensor] = field(default_factory=list)

    @property
    def dirty(self) -> bool:
        """Return True when a forward step ran since the last reset."""
        return self._steps > 0 or any(layer.dirty for layer in self.layers)

    @property
    def readout_layer(self) -> str | None:
        """Return the name of the last synaptic layer, whose output is scored."""
        return next(
            (layer.name for layer in reversed(self.layers) if layer.synaptic), None
        )

    def forward(self, x: Tensor) -> Tensor:
        """Run one step (one timestep for spiking models)."""
        first_step = self._steps == 0
        readout = self.readout_layer
        for layer in self.layers:
            if self.recorder is not None and layer.synaptic:
                self.recorder.observe(layer.name, x.data, first_step=first_step)
            x = layer.forward(x, training=self.training)
            if layer.name == readout:
                self._readout.append(x)
        self._steps += 1
        return x

    def reset_states(self) -> None:
        """Return membranes to rest and drop dropout masks."""
        for layer in self.layers:
            layer.reset()
        self._steps = 0
        self._readout = []

    def train(self, mode: bool = True) -> Network:
        """Switch dropout and batchnorm to training (or eval) behaviour."""
        self.training = mode
        return self

    def eval(self) -> Network:
        """Switch to evaluation behaviour."""
        return self.train(False)

    def seed_dropout(self, rng: np.random.Generator) -> None:
        """Draw dropout masks from rng from now on."""
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def named_parameters(self) -> dict[str, Tensor]:
        """Return trainable tensors keyed ``<layer>.<name>`` in layer order."""
        return {
            f"{layer.name}.{key}": tensor
            for layer in self.layers
            for key, tensor in layer.parameters().items()
        }

    def parameters(self) -> list[Tensor]:
        """Return the trainable tensors in layer order."""
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        """Return parameters and buffers in checkpoint block order."""
        state: dict[str, np.ndarray] = {}
        for layer in self.layers:
            for key, tensor in layer.parameters().items():
                state[f"{layer.name}.{key}"] = tensor.data
            for key, buffer in layer.buffers().items():
                state[f"{layer.name}.{key}"] = buffer
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Replace every parameter and buffer, checking names and shapes first."""
        expected = self.state_dict()
        if list(state) != list(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise ValidationError(
                f"weights do not match the architecture (missing {missing}, "
                f"unexpected {extra})"
            )
        for key, value in state.items():
            if value.shape != expected[key].shape:
                raise ValidationError(
                    f"weight {key} has shape {value.shape}, architecture needs "
                    f"{expected[key].shape}"
                )
        by_name = {layer.name: layer for layer in self.layers}
        for key, value in state.items():
            layer_name, local = key.split(".", 1)
            layer = by_name[layer_name]
            params = layer.parameters()
            if local in params:
                params[local].data = np.array(value, dtype=PARAM_DTYPE)
            else:
                layer.load_buffer(local, np.array(value, dtype=PARAM_DTYPE))

    def scores(self, inputs: np.ndarray | SpikeTrain) -> Tensor:
        """Return class scores for one batch.

        Spiking models score by the last synaptic layer's output averaged over
        the spike train; the output spike layer still fires but is not scored.
        """
        self.reset_states()
        if self.spec.is_spiking:
            if not isinstance(inputs, SpikeTrain):
                raise ContractError("spiking models take a SpikeTrain")
            outputs, _ = run_temporal(self, inputs)
            steps = self._readout or outputs
            total = steps[0]
            for step in steps[1:]:
                total = add(total, step)
            return scale(total, 1.0 / inputs.timesteps)
        if isinstance(inputs, SpikeTrain):
            raise ContractError("cnn models take an image batch, not a SpikeTrain")
        return self.forward(Tensor(inputs))


def build_model(spec: ArchitectureSpec, rng: np.random.Generator) -> Network:
    """Validate spec and build a network with Kaiming-uniform weights."""
    layers: list[Layer] = []
    for shape in spec.validate():
        layer_spec = shape.spec
        match layer_spec:
            case ConvSpec():
                layer: Layer = Conv2d(shape.name, layer_spec, shape.input_shape[0], rng)
            case BatchNormSpec():
                layer = BatchNorm2d(shape.name, layer_spec, shape.input_shape[0])
            case PoolSpec():
                layer = MaxPool2d(shape.name, layer_spec)
            case LinearSpec():
                layer = Linear(shape.name, layer_spec, shape.input_shape[0], rng)
            case DropoutSpec():
                layer = Dropout(shape.name, layer_spec, rng)
            case SpikeSpec():
                layer = IFNeuron(shape.name, layer_spec)
            case ReluSpec():
                layer = ReLU(shape.name, layer_spec)
            case _:
                layer = Flatten(shape.name, layer_spec)
        layers.append(layer)
    network = Network(spec, layers)
    LOGGER.debug(
        "Built %s with %s layers and %s parameters",
        spec.name.value,
        len(layers),
        count_params(network)[0],
    )
    return network


def count_params(network: Network) -> tuple[int, int]:
    """Return the trainable scalar count and its 32-bit serialized size."""
    count = sum(tensor.data.size for tensor in network.parameters())
    return count, 4 * count


# Checkpoints


@dataclass(frozen=True, eq=False)
class ModelCheckpoint:
    """Spec, named weight blocks and training metadata."""

    spec: ArchitectureSpec
    weights: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_network(
        cls, network: Network, metadata: Mapping[str, Any] | None = None
    ) -> ModelCheckpoint:
        """Snapshot a network's current weights."""
        weights = {
            key: np.array(value, dtype=PARAM_DTYPE)
            for key, value in network.state_dict().items()
        }
        return cls(network.spec, weights, dict(metadata or network.metadata))

    def restore(self) -> Network:
        """Build a network holding these weights, in eval mode."""
        network = build_model(self.spec, np.random.default_rng(0))
        network.load_state_dict(self.weights)
        network.metadata = dict(self.metadata)
        return network.eval()

    def to_bytes(self) -> bytes:
        """Encode as a JSON header line followed by little-endian f32 blocks."""
        payload = b"".join(
            np.ascontiguousarray(value, dtype=CHECKPOINT_BLOCK_DTYPE).tobytes()
            for value in self.weights.values()
        )
        header = {
            "magic": CHECKPOINT_MAGIC,
            "format_version": CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "blocks": [
                {"name": key, "shape": list(value.shape)}
                for key, value in self.weights.items()
            ],
            "metadata": self.metadata,
            "payload_bytes": len(payload),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> ModelCheckpoint:
        """Decode and verify a checkpoint; nothing is returned on failure."""
        head, sep, payload = data.partition(b"\n")
        if not sep:
            raise IntegrityError(f"{source}: missing checkpoint header")
        try:
            header = json.loads(head.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise IntegrityError(f"{source}: unreadable checkpoint header") from err
        if not isinstance(header, dict) or header.get("magic") != CHECKPOINT_MAGIC:
            raise IntegrityError(f"{source}: not a checkpoint file")
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"{source}: unsupported checkpoint version "
                f"{header.get('format_version')}"
            )
        if len(payload) != header.get("payload_bytes"):
            raise IntegrityError(
                f"{source}: truncated checkpoint ({len(payload)} of "
                f"{header.get('payload_bytes')} payload bytes)"
            )
        if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
            raise IntegrityError(f"{source}: checkpoint checksum mismatch")

        try:
            blocks = [(str(b["name"]), tuple(b["shape"])) for b in header["blocks"]]
            spec_data = header["spec"]
        except (KeyError, TypeError) as err:
            raise IntegrityError(f"{source}: malformed checkpoint header") from err
        spec = ArchitectureSpec.from_dict(spec_data)
        weights: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in blocks:
            count = math.prod(shape)
            chunk = payload[offset : offset + 4 * count]
            if len(chunk) != 4 * count:
                raise IntegrityError(f"{source}: block {name} is truncated")
            weights[name] = (
                np.frombuffer(chunk, dtype=CHECKPOINT_BLOCK_DTYPE)
                .reshape(shape)
                .astype(PARAM_DTYPE)
            )
            offset += 4 * count
        if offset != len(payload):
            raise IntegrityError(f"{source}: trailing bytes after the last block")
        return cls(spec, weights, dict(header.get("metadata") or {}))


def save_checkpoint(
    network: Network | ModelCheckpoint,
    path: str | Path,
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Atomically write a network (or an existing snapshot) to path."""
    checkpoint = (
        network
        if isinstance(network, ModelCheckpoint)
        else ModelCheckpoint.from_network(network, metadata)
    )
    target = atomic_write_bytes(path, checkpoint.to_bytes())
    LOGGER.info("Saved %s checkpoint to %s", checkpoint.spec.name.value, target)
    return target


def read_checkpoint(path: str | Path) -> ModelCheckpoint:
    """Read and verify a checkpoint file."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as err:
        raise IntegrityError(f"checkpoint not found: {path}") from err
    return ModelCheckpoint.from_bytes(data, str(path))


def load_checkpoint(
    path: str | Path, expected_kind: ModelKind | None = None
) -> Network:
    """Read a checkpoint and rebuild its network in eval mode.

    When expected_kind is given, a checkpoint of another family is rejected.
    """
    checkpoint = read_checkpoint(path)
    if expected_kind is not None and checkpoint.spec.name is not expected_kind:
        raise ValidationError(
            f"{path} holds a {checkpoint.spec.name.value} model, expected "
            f"{expected_kind.value}"
        )
    network = checkpoint.restore()
    LOGGER.info("Loaded %s checkpoint from %s", checkpoint.spec.name.value, path)
    return network
