"""Beam-pair allocation and tracking simulation for time-varying mmWave MIMO links."""

__version__ = "0.1.0"
