"""Gaze-contingent time-contrastive visual learning toolkit."""

__version__ = "0.1.0"
