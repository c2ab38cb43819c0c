"""Graphical patch-weight representations for heterogeneous image matching."""

__version__ = "0.1.0"
