"""Infant reach recognition from per-frame bounding boxes."""

__version__ = "0.1.0"
