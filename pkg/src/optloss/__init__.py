"""Optimal-loss estimation and training-schedule tools for diffusion models."""

__version__ = "0.1.0"
