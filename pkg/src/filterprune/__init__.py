"""Structured filter pruning for residual CNN defect classifiers."""

__version__ = "0.1.0"
