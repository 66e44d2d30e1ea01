"""Tests for configuration schemas and config-file loading."""

from __future__ import annotations

import json

import pytest
import voluptuous as vol

from spad_gesture.config import (
    ARCHITECTURE_SCHEMA,
    LAYER_SCHEMAS,
    load_architecture_config,
    load_json_file,
    load_run_config,
    packaged_architecture,
    validate,
)
from spad_gesture.const import LAYER_KINDS, MODEL_KINDS
from spad_gesture.errors import DataError, ValidationError


def test_every_layer_kind_has_a_schema() -> None:
    """The schema table covers every layer type."""
    assert sorted(LAYER_SCHEMAS) == sorted(LAYER_KINDS)


def test_layer_defaults_are_filled_in() -> None:
    """Optional layer fields get their defaults."""
    config = validate(
        ARCHITECTURE_SCHEMA,
        {"name": "cnn", "layers": [{"type": "conv", "out_channels": 4, "kernel": 3}]},
        "architecture",
    )

    assert config["layers"][0] == {
        "type": "conv",
        "out_channels": 4,
        "kernel": 3,
        "stride": 1,
        "padding": 0,
    }
    assert config["input_shape"] == [1, 25, 25]
    assert config["num_classes"] == 11


@pytest.mark.parametrize(
    "layer",
    [
        {"type": "conv", "out_channels": 0, "kernel": 3},
        {"type": "dropout", "p": 1.0},
        {"type": "spike", "v_threshold": -1.0},
        {"type": "pool", "window": 2, "stride": 2},
        {"kernel": 3},
    ],
)
def test_invalid_layers_are_rejected(layer) -> None:
    """Out-of-range values, unknown keys and untyped layers fail validation."""
    with pytest.raises(ValidationError):
        validate(ARCHITECTURE_SCHEMA, {"name": "cnn", "layers": [layer]}, "arch")


def test_validate_wraps_voluptuous_errors() -> None:
    """Schema failures surface as ValidationError naming the subject."""
    with pytest.raises(ValidationError, match="invalid thing"):
        validate(vol.Schema(int), "x", "thing")


@pytest.mark.parametrize("name", MODEL_KINDS)
def test_packaged_architectures_validate(name) -> None:
    """Every shipped config passes the schema."""
    config = validate(ARCHITECTURE_SCHEMA, packaged_architecture(name), name)

    assert config["name"] == name


def test_bare_names_resolve_to_shipped_configs(tmp_path, monkeypatch) -> None:
    """scnn and scnn.cfg both resolve when no such file exists."""
    monkeypatch.chdir(tmp_path)

    assert load_architecture_config("scnn") == load_architecture_config("scnn.cfg")


def test_local_file_wins_over_shipped_config(tmp_path, monkeypatch) -> None:
    """An existing file is read instead of the shipped default."""
    monkeypatch.chdir(tmp_path)
    config = {
        "name": "cnn",
        "layers": [{"type": "flatten"}, {"type": "fc", "out_features": 11}],
    }
    (tmp_path / "cnn.cfg").write_text(json.dumps(config))

    assert len(load_architecture_config("cnn.cfg")["layers"]) == 2


def test_missing_architecture_config(tmp_path) -> None:
    """Unknown paths are data errors."""
    with pytest.raises(DataError):
        load_architecture_config(tmp_path / "nope.cfg")


def test_invalid_json(tmp_path) -> None:
    """Malformed JSON is a validation error."""
    path = tmp_path / "bad.json"
    path.write_text("{not json")

    with pytest.raises(ValidationError):
        load_json_file(path)


def test_run_config(tmp_path) -> None:
    """Run configs carry nested train and synth sections."""
    path = tmp_path / "run.json"
    path.write_text(
        json.dumps(
            {
                "seed": 3,
                "format": "csv",
                "train": {"lr": 0.01, "max_epochs": 5},
                "synth": {"photon_budget": 500},
            }
        )
    )

    config = load_run_config(path)

    assert config["train"] == {"lr": 0.01, "max_epochs": 5}
    assert config["synth"]["photon_budget"] == 500.0


def test_run_config_rejects_unknown_keys(tmp_path) -> None:
    """Typos in run configs are reported."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"sead": 3}))

    with pytest.raises(ValidationError):
        load_run_config(path)


@pytest.mark.parametrize(("ratio", "valid"), [(0.5, True), (1.0, False), (1.5, False)])
def test_run_config_val_ratio(tmp_path, ratio, valid) -> None:
    """The validation split ratio must lie strictly between 0 and 1."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"val_ratio": ratio}))

    if valid:
        assert load_run_config(path)["val_ratio"] == ratio
    else:
        with pytest.raises(ValidationError):
            load_run_config(path)
