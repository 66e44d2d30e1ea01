"""Atomic artifact writing and report encoding."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from .const import LOGGER
from .errors import DataError


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Write data to a sibling temp file, then rename it over path."""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(
            prefix=f".{target.name}.", suffix=".tmp", dir=target.parent
        )
    except OSError as err:
        raise DataError(f"cannot write {target}: {err}") from err
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except OSError as err:
        Path(tmp_name).unlink(missing_ok=True)
        raise DataError(f"cannot write {target}: {err}") from err
    LOGGER.debug("Wrote %s (%s bytes)", target, len(data))
    return target


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Atomically write UTF-8 text with LF line endings."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header: Sequence[str] | None, rows: Iterable[Sequence[Any]]) -> str:
    """Encode rows as CSV text with LF line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(
    path: str | Path, header: Sequence[str] | None, rows: Iterable[Sequence[Any]]
) -> Path:
    """Atomically write a CSV file."""
    return atomic_write_text(path, csv_text(header, rows))


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot encode {type(value).__name__} in a report")


def report_text(report: dict[str, Any]) -> str:
    """Encode a report as indented, key-sorted JSON."""
    return json.dumps(report, indent=2, sort_keys=True, default=_jsonable) + "\n"


def write_report(path: str | Path, report: dict[str, Any]) -> Path:
    """Atomically write a structured-text report."""
    return atomic_write_text(path, report_text(report))


def sha256_file(path: str | Path) -> str:
    """Return the hex SHA-256 digest of a file's contents."""
    digest = hashlib.sha256()
    try:
        with Path(path).open("rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 16), b""):
                digest.update(chunk)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    return digest.hexdigest()
