"""Numerical laboratory for self-interacting diffusions."""
__version__ = "0.1.0"
