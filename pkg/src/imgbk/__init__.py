"""Imbalanced node classification with gated bi-kernel message passing."""

__version__ = "0.1.0"
