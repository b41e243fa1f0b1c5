"""Doubly mean-reflected G-BSDE solvers."""
__version__ = "0.1.0"
