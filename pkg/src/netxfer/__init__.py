"""Sim-to-real transfer learning for windowed network delay models."""

__version__ = "0.1.0"
