"""Unified face matching and spoof detection, desk scale, numpy only."""

__version__ = "0.1.0"
