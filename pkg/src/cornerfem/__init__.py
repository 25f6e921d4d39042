"""Finite elements for elliptic operators with corner-singular coefficients."""
__version__ = "0.1.0"
