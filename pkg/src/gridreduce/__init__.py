"""Reduced-order equivalents of power networks with a built-in EMT solver."""

__version__ = "0.1.0"
