"""Capacitary inradii, p-capacities and Poincare-type constants on rasterized domains."""
from __future__ import annotations

__version__ = "0.1.0"
