"""Sensor-attention fusion for wearable activity recognition on DFT images."""

__version__ = "0.1.0"
