"""Packed additively homomorphic encryption + garbled circuits for two-party inference."""

__version__ = "0.1.0"
