"""Finite element recovery of wave-equation sources from final-time point data."""

from wavesource.errors import (
    ConfigError,
    DegenerateDataError,
    InsufficientDataError,
    NumericalError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateDataError",
    "InsufficientDataError",
    "NumericalError",
    "__version__",
]
