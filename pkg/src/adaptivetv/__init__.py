"""Adaptive quad-tree solvers for L1-L2-TV denoising and optical flow."""

__version__ = "0.1.0"
