"""Gesture classifiers for 8x8 SPAD photon-count frames."""

from __future__ import annotations

__version__ = "0.1.0"
