"""Numerical verification of Hardy-type inequalities for degenerate p-Laplacians."""

__version__ = "0.1.0"
