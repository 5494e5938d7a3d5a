"""Simulation lab for GMC inverses, welding extensions and Lehto integrals."""

__version__ = "0.1.0"
