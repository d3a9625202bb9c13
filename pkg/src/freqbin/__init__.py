"""Frequency-bin entangled qudits from a multi-ring photonic source."""

__version__ = "0.1.0"
