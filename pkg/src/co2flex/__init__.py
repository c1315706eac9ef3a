"""Desk-scale exploration of national CO2 target configurations in a
capacity-expansion power system model."""

__version__ = "0.1.0"
