"""Kähler-Ricci flow laboratory on symmetry-reduced metrics on CP^1."""

__version__ = "0.1.0"
