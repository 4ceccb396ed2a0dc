"""Stochastic 2-D primitive equations: Galerkin simulator and diagnostics lab."""

__version__ = "1.0.0"
