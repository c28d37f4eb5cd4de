"""Simulator for silicon-photonic QKD transmitters and receivers."""

__version__ = "0.1.0"
