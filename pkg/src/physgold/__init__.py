"""Physiologically-adapted gold standards for continuous arousal."""

__version__ = "0.1.0"
