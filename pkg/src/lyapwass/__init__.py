"""Lyapunov exponents of random 2x2 matrix products and exact W1 transport."""

__version__ = "0.1.0"
