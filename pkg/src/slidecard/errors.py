"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
0 ok, 2 config, 3 parse, 4 resource, 5 incompatible sketches.
"""

from __future__ import annotations


class SlidecardError(Exception):
    exit_code = 1


class ConfigError(SlidecardError, ValueError):
    """Invalid parameters or configuration values."""

    exit_code = 2


class ParameterError(ConfigError):
    """An operation was called with arguments outside its domain."""


class ParseError(SlidecardError):
    exit_code = 3


class TraceParseError(ParseError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class OrderingError(ParseError):
    """Timestamp regression larger than the configured tolerance."""


class FormatError(ParseError):
    """Malformed or truncated sketch file."""


class ResourceError(SlidecardError):
    exit_code = 4


class ReconstructionOverflow(ResourceError):
    """Live candidate tuples exceeded the configured cap."""


class SaturationError(ResourceError):
    """Setting-factor product reached 1; estimates are unusable."""


class IncompatibleSketchError(SlidecardError):
    exit_code = 5


class AlignmentError(IncompatibleSketchError):
    """Report and ground truth cover different windows."""
