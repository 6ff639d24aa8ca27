"""Exception hierarchy shared by all modules."""


class VideoImprintError(Exception):
    """Base class for all library errors."""


class DomainError(VideoImprintError, ValueError):
    """Invalid argument values or inconsistent shapes at an operation boundary."""


class ConfigError(VideoImprintError, ValueError):
    """Invalid model or pipeline configuration (detected before any work starts)."""


class ParseError(VideoImprintError, ValueError):
    """Malformed or truncated binary/JSON artifact file."""


class NumericalError(VideoImprintError, ArithmeticError):
    """Numerical failure during iterative optimization (NaN, divergence)."""
