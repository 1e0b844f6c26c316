"""Estimate the worker population across a census of online labour platforms."""

__version__ = "0.1.0"
