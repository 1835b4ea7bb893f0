"""Spectral-hole-burning quantum computer: simulation and compilation."""

__version__ = "0.1.0"
