"""Python bindings for the realm event distillation toolkit."""

from ._core import *  # noqa: F401,F403
from ._core import RealmError, run_cli

__all__ = [name for name in dir() if not name.startswith("_")]
