"""Simulation and analysis toolkit for a branching-path single-photon QRNG."""

__version__ = "0.1.0"
