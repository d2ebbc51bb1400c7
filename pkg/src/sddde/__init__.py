"""Simulation and structural checks for a threshold-delay stem-cell model."""

__version__ = "0.1.0"
