"""Temporal kernel-predicting Monte Carlo denoiser with robust-average blocks."""

__version__ = "0.1.0"
