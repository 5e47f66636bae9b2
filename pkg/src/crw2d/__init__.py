"""Coalescing and annihilating random walks on Z^2: simulators and exact oracles."""

__version__ = "0.1.0"
