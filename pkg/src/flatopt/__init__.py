"""Flat-direction accelerated matrix optimizers and their analysis tools."""

__version__ = "0.1.0"
