"""Deterministic core of a literature-synthesis pipeline."""

__version__ = "0.1.0"
