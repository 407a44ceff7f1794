"""Dual-level retrieval for instruction-following navigation on viewpoint graphs."""

__version__ = "0.1.0"
