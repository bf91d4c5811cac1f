"""Desk-scale laboratory for video-level multi-label classification."""

__version__ = "1.0.0"
