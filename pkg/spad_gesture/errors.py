"""Exception hierarchy for the SPAD gesture package.

Each error carries the exit status the command-line entry point reports for it:
1 for usage and contract problems, 2 for data problems, 3 for numeric or
training failures.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class SpadGestureError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_USAGE


class UsageError(SpadGestureError):
    """Invalid command-line usage or option values."""


class ContractError(SpadGestureError, RuntimeError):
    """An API precondition was violated by the caller."""


class DataError(SpadGestureError):
    """A dataset is empty, inconsistent or cannot be split."""

    exit_code = EXIT_DATA


class ParseError(DataError):
    """A dataset row could not be parsed."""

    def __init__(self, path: str, line: int, reason: str) -> None:
        """Initialize with the offending file and line number."""
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class FormatError(DataError):
    """A dataset directory is missing required files."""


class ImportLayoutError(DataError):
    """A released dataset copy does not match any known layout."""


class ValidationError(DataError):
    """A configuration, spec or checkpoint failed validation."""


class ArchitectureError(ValidationError):
    """Layer shapes do not chain from the input shape to the class count."""

    def __init__(self, layer: str, reason: str) -> None:
        """Initialize with the offending layer name."""
        super().__init__(f"layer {layer}: {reason}")
        self.layer = layer


class IntegrityError(DataError):
    """A checkpoint file is truncated or fails its checksum."""


class LabelIndexError(DataError, IndexError):
    """A class label lies outside [0, K)."""


class NumericError(SpadGestureError):
    """Base class for numeric failures."""

    exit_code = EXIT_NUMERIC


class DimensionError(NumericError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class EmptyBatchError(DimensionError):
    """An operation received a batch with no samples."""


class DomainError(NumericError, ValueError):
    """A value lies outside the domain an operation accepts."""


class OptimizerError(NumericError):
    """The optimizer received a non-finite gradient."""

    def __init__(self, parameter: str, reason: str = "non-finite gradient") -> None:
        """Initialize with the offending parameter name."""
        super().__init__(f"{reason} for parameter {parameter}")
        self.parameter = parameter


class TrainingError(NumericError):
    """Training diverged or could not proceed."""
