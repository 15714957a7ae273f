"""Blockchain network structure vectors and event impact scoring."""

__version__ = "0.1.0"
