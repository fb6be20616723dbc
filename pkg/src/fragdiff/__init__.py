"""Structural fragment retrieval and retrieval-conditioned sequence diffusion."""

__version__ = "0.1.0"
