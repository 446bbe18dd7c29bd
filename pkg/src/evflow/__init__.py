"""Unsupervised event-based optical flow with a motion-guided recurrent network."""

__version__ = "0.1.0"
