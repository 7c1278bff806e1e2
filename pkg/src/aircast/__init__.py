"""Physically constrained graph surrogate for multi-station air-quality forecasting."""

__version__ = "0.1.0"
