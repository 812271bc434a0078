"""Toolkit for single-image material extraction experiments.

Rectification, thin-plate splines, a software renderer for synthetic
datasets, diffusion kernels with toy denoisers and evaluation metrics.
"""
__version__ = "0.1.0"
