"""Sampling-based trajectory optimization with incremental horizons."""

__version__ = "0.1.0"
