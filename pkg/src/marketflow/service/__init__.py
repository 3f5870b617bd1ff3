"""HTTP API wrapping the pipeline library."""

from .app import create_app

__all__ = ["create_app"]
