"""Simulation and verification tools for differential inclusions and their relaxations."""

__version__ = "0.1.0"
