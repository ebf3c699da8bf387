"""Enclosure-method reconstruction of polygonal conductivity inclusions."""

__version__ = "0.1.0"

from enclosure_eit.cli import app

__all__ = ["app", "__version__"]
