"""Dual-camera HDR video: capture simulation, exposure-adaptive fusion network and stability metrics."""

__version__ = "0.1.0"
