"""Hadamard parametrix, point-split renormalization and Wick squares for Dirac fields."""

__version__ = "0.1.0"
