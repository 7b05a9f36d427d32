"""Numerical laboratory for scale-covariant electrodynamics of extended charges."""

__version__ = "0.1.0"
