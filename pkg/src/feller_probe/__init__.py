"""Numerical probes for the positivity of square-root (affine) diffusions."""

__version__ = "0.1.0"
