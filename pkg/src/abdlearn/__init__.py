"""Abductive training of neural modules through a symbolic module."""

__version__ = "0.1.0"
