"""Dynamical-decoupling noise spectroscopy and quantum-memory analysis."""

__version__ = "0.1.0"
