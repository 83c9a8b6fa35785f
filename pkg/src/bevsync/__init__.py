"""Desk-scale multi-view BEV-conditioned generation with cross-view consistency machinery."""

__version__ = "0.1.0"
