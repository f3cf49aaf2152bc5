"""HTTP service layer wrapping the conversion engine."""

from .app import create_app

__all__ = ["create_app"]
