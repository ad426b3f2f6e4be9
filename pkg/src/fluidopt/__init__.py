"""Differentiable multi-material particle/grid simulation and trajectory optimisation."""
__version__ = "0.1.0"
