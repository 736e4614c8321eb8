"""Desk-scale perception-oriented stereo super-resolution lab."""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND"]
