"""Poisson-informed Retinex decomposition for low-light image enhancement."""

__version__ = "0.1.0"
