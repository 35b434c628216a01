"""Wasserstein projection energy of lattice sets."""

__version__ = "0.1.0"
