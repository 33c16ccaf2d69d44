"""Turning-point identification over learned sparse scene graphs."""

__version__ = "0.1.0"
