"""Finite-dimensional laboratory for Krasnosel'skii-Mann iterations and
generalized proximal point algorithms."""

__version__ = "0.1.0"
