"""Constrained convolutional detector of sequential learner behaviors."""

__version__ = "0.1.0"
