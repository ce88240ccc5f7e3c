"""Adaptive label smoothing on sub-classifiers for learning with noisy labels."""
__version__ = "0.1.0"
