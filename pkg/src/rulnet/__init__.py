"""Remaining-useful-life prediction on C-MAPSS-style data with a numpy-only hybrid network."""

__version__ = "0.1.0"
