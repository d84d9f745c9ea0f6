"""Differentiable photometric-consistency toolkit with direct optimization."""

__version__ = "0.1.0"
