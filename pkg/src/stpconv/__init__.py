"""Spatiotemporal gap filling with three-dimensional partial convolutions."""

__version__ = "0.1.0"
