"""Finite element laboratory for the evolutionary Stokes problem with dynamic slip."""

__version__ = "0.1.0"
