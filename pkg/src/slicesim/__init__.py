"""Modular core-network control plane framework and deterministic slice simulator."""

__version__ = "0.1.0"
