"""Solver-backed auditing of natural-language safety requirements."""

__version__ = "0.1.0"
