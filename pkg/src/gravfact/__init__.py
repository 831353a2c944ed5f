"""Numerical checks for linearized gravity as a classical BV field theory."""

__version__ = "0.1.0"
