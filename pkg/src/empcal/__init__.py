"""Empirical calibration of effect estimates with negative and synthetic positive controls."""

__version__ = "0.1.0"
