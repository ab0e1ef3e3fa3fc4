"""Desk-scale lane perception and road-topology reasoning on synthetic scenes."""

__version__ = "0.1.0"
