"""Numerical laboratory for the su(N) quantized Euler equations on the sphere."""

__version__ = "0.1.0"
