"""Adaptive graph convolution networks for traffic forecasting."""

__version__ = "0.1.0"
