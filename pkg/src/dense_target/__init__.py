"""Gaussian-map auxiliary supervision for dense object detection, at desk scale."""

__version__ = "0.1.0"
