"""Microscopic traffic simulation with lane-change relaxation."""

__version__ = "0.1.0"
