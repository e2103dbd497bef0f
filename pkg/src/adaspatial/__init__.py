"""Adaptive spatial weighting for diffusion losses and lightweight segmentation."""

__version__ = "0.1.0"
