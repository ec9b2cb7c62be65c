"""Acoustic-to-articulatory inversion with speaker/content decomposition
and lip auxiliary features."""

__version__ = "0.1.0"
