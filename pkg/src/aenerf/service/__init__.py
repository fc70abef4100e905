"""HTTP inference service: encode images, manipulate attributes, render."""

from .app import create_app

__all__ = ["create_app"]
