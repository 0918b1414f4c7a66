"""Desk-scale idempotent conditional diffusion on skeleton sequences."""

__version__ = "0.1.0"
