"""Ambient backscatter over LTE cell-specific reference signals: simulator and receiver."""

__version__ = "0.1.0"
