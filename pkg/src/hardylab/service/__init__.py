"""FastAPI service exposing the experiment runners over HTTP."""

from .app import app, create_app

__all__ = ["app", "create_app"]
