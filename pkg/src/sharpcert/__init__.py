"""Certificates of sharp and strong minima for group-sparse recovery."""

__version__ = "0.1.0"
