"""Exception types shared across the package.

The command line maps these onto process exit codes, so library code
should raise the most specific type that applies.
"""


class ConfigError(ValueError):
    """A configuration file or option set is inconsistent or out of range."""


class NumericalError(RuntimeError):
    """A linear solve or iteration failed to produce a usable result."""


class DegenerateDataError(NumericalError):
    """Data admit only the zero reconstruction, so data-driven rules break down."""


class InsufficientDataError(RuntimeError):
    """Too few usable points remain to fit or report the requested quantity."""
