"""Numerical laboratory for equivariant Schrodinger maps near harmonic maps."""

__version__ = "0.1.0"
