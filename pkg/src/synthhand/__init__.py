"""Synthetic hand image/joint-angle data generation, regression and evaluation."""

__version__ = "0.1.0"
