"""Numerical laboratory for growth rates of invariant manifolds of toral maps."""

__version__ = "0.1.0"
