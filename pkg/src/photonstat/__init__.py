"""Simulation and analysis of single-mode thermal light photon statistics."""

__version__ = "0.1.0"
