"""Ising and FK models with exponentially decaying long-range couplings."""

__version__ = "0.1.0"
