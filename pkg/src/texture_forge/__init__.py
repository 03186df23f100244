"""Polycrystal process design: ODF texture evolution, surrogate networks, path search."""

__version__ = "0.1.0"
