"""Fused silhouette and accelerometer energy-expenditure estimation."""

__version__ = "0.1.0"
