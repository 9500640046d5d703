"""Skeleton image encoding with body/hand fusion for action recognition."""

from .core import SkelfusionError, ValidationError

__version__ = "0.1.0"
__all__ = ["SkelfusionError", "ValidationError", "__version__"]
