"""Transmodal ordered network analysis of multimodal classroom event streams."""

__version__ = "0.1.0"

from .errors import ConfigError, ConvergenceError, DataError, TransonaError  # noqa: E402

__all__ = ["ConfigError", "ConvergenceError", "DataError", "TransonaError", "__version__"]
