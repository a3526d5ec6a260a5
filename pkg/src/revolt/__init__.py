"""Relation-guided object-goal navigation on procedural 2D houses."""

from .config import Config

__version__ = "0.1.0"

__all__ = ["Config", "__version__"]
