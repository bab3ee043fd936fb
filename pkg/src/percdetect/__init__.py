"""Percolation-based detection of grayscale objects in noisy images."""

__version__ = "0.1.0"
