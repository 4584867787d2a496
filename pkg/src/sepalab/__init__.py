"""Finite-precision Transformer and RNN constructions, protocols and task oracles."""

__version__ = "0.1.0"
