"""Configuration schemas and config-file loading."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CONF_ADAM_EPS,
    CONF_BATCH_SIZE,
    CONF_BETAS,
    CONF_LEARNING_RATE,
    CONF_MAX_EPOCHS,
    CONF_PATIENCE,
    CONF_SEED,
    CONF_TIMESTEPS,
    DEFAULT_DROPOUT,
    DEFAULT_SURROGATE_ALPHA,
    DEFAULT_TIMESTEPS,
    DEFAULT_V_THRESHOLD,
    INPUT_SHAPE,
    LOGGER,
    MODEL_KINDS,
    NUM_CLASSES,
    DatasetSource,
    LayerKind,
    ReportFormat,
)
from .errors import DataError, ValidationError

POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
NON_NEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))
UNIT_INTERVAL_OPEN = vol.All(
    vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
)
SPLIT_RATIO = vol.All(
    vol.Coerce(float),
    vol.Range(min=0, max=1, min_included=False, max_included=False),
)

LAYER_SCHEMAS: dict[str, vol.Schema] = {
    LayerKind.CONV.value: vol.Schema(
        {
            vol.Required("type"): LayerKind.CONV.value,
            vol.Required("out_channels"): POSITIVE_INT,
            vol.Required("kernel"): POSITIVE_INT,
            vol.Optional("stride", default=1): POSITIVE_INT,
            vol.Optional("padding", default=0): NON_NEGATIVE_INT,
        }
    ),
    LayerKind.BATCHNORM.value: vol.Schema(
        {vol.Required("type"): LayerKind.BATCHNORM.value}
    ),
    LayerKind.POOL.value: vol.Schema(
        {
            vol.Required("type"): LayerKind.POOL.value,
            vol.Optional("window", default=2): POSITIVE_INT,
        }
    ),
    LayerKind.FLATTEN.value: vol.Schema(
        {vol.Required("type"): LayerKind.FLATTEN.value}
    ),
    LayerKind.FC.value: vol.Schema(
        {
            vol.Required("type"): LayerKind.FC.value,
            vol.Required("out_features"): POSITIVE_INT,
        }
    ),
    LayerKind.DROPOUT.value: vol.Schema(
        {
            vol.Required("type"): LayerKind.DROPOUT.value,
            vol.Optional("p", default=DEFAULT_DROPOUT): UNIT_INTERVAL_OPEN,
        }
    ),
    LayerKind.SPIKE.value: vol.Schema(
        {
            vol.Required("type"): LayerKind.SPIKE.value,
            vol.Optional("v_threshold", default=DEFAULT_V_THRESHOLD): POSITIVE_FLOAT,
            vol.Optional("alpha", default=DEFAULT_SURROGATE_ALPHA): POSITIVE_FLOAT,
        }
    ),
    LayerKind.RELU.value: vol.Schema({vol.Required("type"): LayerKind.RELU.value}),
}


def _layer(value: Any) -> dict[str, Any]:
    """Validate one layer descriptor against the schema for its type."""
    if not isinstance(value, dict) or "type" not in value:
        raise vol.Invalid("layer descriptor needs a 'type'")
    schema = LAYER_SCHEMAS.get(value["type"])
    if schema is None:
        raise vol.Invalid(f"unknown layer type {value['type']!r}")
    return schema(value)


ARCHITECTURE_SCHEMA = vol.Schema(
    {
        vol.Required("name"): vol.In(MODEL_KINDS),
        vol.Required("layers"): vol.All([_layer], vol.Length(min=1)),
        vol.Optional("input_shape", default=list(INPUT_SHAPE)): vol.All(
            [POSITIVE_INT], vol.Length(min=1)
        ),
        vol.Optional("num_classes", default=NUM_CLASSES): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
        vol.Optional("timesteps", default=DEFAULT_TIMESTEPS): POSITIVE_INT,
    }
)

BETA = vol.All(vol.Coerce(float), vol.Range(min=0, max=1, max_included=False))

TRAIN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_LEARNING_RATE): POSITIVE_FLOAT,
        vol.Optional(CONF_BETAS): vol.All(
            vol.ExactSequence([BETA, BETA]), vol.Coerce(tuple)
        ),
        vol.Optional(CONF_ADAM_EPS): POSITIVE_FLOAT,
        vol.Optional(CONF_BATCH_SIZE): POSITIVE_INT,
        vol.Optional(CONF_MAX_EPOCHS): POSITIVE_INT,
        vol.Optional(CONF_PATIENCE): POSITIVE_INT,
        vol.Optional(CONF_SEED): NON_NEGATIVE_INT,
        vol.Optional(CONF_TIMESTEPS): POSITIVE_INT,
    }
)

SYNTH_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("rotation"): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=180)
        ),
        vol.Optional("photon_budget"): POSITIVE_FLOAT,
        vol.Optional("background"): NON_NEGATIVE_FLOAT,
        vol.Optional("render_size"): vol.All(vol.Coerce(int), vol.Range(min=8)),
        vol.Optional("seed"): NON_NEGATIVE_INT,
    }
)

MANIFEST_SCHEMA = vol.Schema(
    {
        vol.Required("version"): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Required("class_names"): vol.All([str], vol.Length(min=2)),
        vol.Required("frame_counts"): [NON_NEGATIVE_INT],
        vol.Optional("seed", default=None): vol.Any(None, NON_NEGATIVE_INT),
        vol.Required("source"): vol.In([s.value for s in DatasetSource]),
    }
)

RUN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("data"): str,
        vol.Optional("arch"): str,
        vol.Optional("checkpoint"): str,
        vol.Optional("out"): str,
        vol.Optional("seed"): NON_NEGATIVE_INT,
        vol.Optional("seeds"): POSITIVE_INT,
        vol.Optional("val_ratio"): SPLIT_RATIO,
        vol.Optional("ambient"): NON_NEGATIVE_FLOAT,
        vol.Optional("format"): vol.In([f.value for f in ReportFormat]),
        vol.Optional("train"): TRAIN_CONFIG_SCHEMA,
        vol.Optional("synth"): SYNTH_CONFIG_SCHEMA,
    }
)


def validate(schema: vol.Schema, value: Any, what: str) -> Any:
    """Apply a voluptuous schema, converting failures into ValidationError."""
    try:
        return schema(value)
    except vol.Invalid as err:
        raise ValidationError(f"invalid {what}: {err}") from err


def load_json_file(path: str | Path) -> Any:
    """Read a JSON document, naming the path on failure."""
    file_path = Path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except FileNotFoundError as err:
        raise DataError(f"file not found: {file_path}") from err
    except OSError as err:
        raise DataError(f"cannot read {file_path}: {err}") from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ValidationError(f"{file_path} is not valid JSON: {err}") from err


def packaged_architecture(name: str) -> dict[str, Any]:
    """Return the shipped architecture config for cnn, scnn or smlp."""
    stem = name.removesuffix(".cfg")
    if stem not in MODEL_KINDS:
        raise ValidationError(f"no shipped architecture named {name!r}")
    source = resources.files(__package__).joinpath("configs", f"{stem}.cfg")
    return json.loads(source.read_text(encoding="utf-8"))


def load_architecture_config(path: str | Path) -> dict[str, Any]:
    """Load and validate an architecture config file.

    A bare ``cnn``/``scnn``/``smlp`` name (with or without ``.cfg``) that is
    not an existing file resolves to the shipped default.
    """
    file_path = Path(path)
    if file_path.exists():
        raw = load_json_file(file_path)
    elif (
        file_path.name.removesuffix(".cfg") in MODEL_KINDS
        and file_path.parent == Path(".")
    ):
        LOGGER.debug("Using shipped architecture config %s", file_path.name)
        raw = packaged_architecture(file_path.name)
    else:
        raise DataError(f"architecture config not found: {file_path}")
    return validate(ARCHITECTURE_SCHEMA, raw, f"architecture config {file_path}")


def load_run_config(path: str | Path) -> dict[str, Any]:
    """Load and validate a run config file."""
    return validate(RUN_CONFIG_SCHEMA, load_json_file(path), f"run config {path}")
