"""Numerical laboratory for the quantum Lighthill density equation."""

__version__ = "0.1.0"
