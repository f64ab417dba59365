"""Offline patch-feature exporter producing PFMAP1 files."""

__version__ = "0.1.0"
