"""Exception hierarchy for the depth sampling service."""

from typing import Optional


class DepthSamplingError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(DepthSamplingError, ValueError):
    """An argument violates an operation precondition."""


class FormatError(InvalidInputError):
    """A file does not have the expected layout."""


class ParseError(FormatError):
    """A key-value file is missing a key or holds a malformed value."""

    def __init__(self, key: str, message: Optional[str] = None):
        self.key = key
        super().__init__(message or f"missing or malformed key: {key}")


class DepthRangeError(InvalidInputError):
    """A depth cannot be represented in the requested encoding."""


class InvalidSampleError(InvalidInputError):
    """A sample index points at an invalid source pixel."""


class InfeasibleSampleError(DepthSamplingError):
    """More samples requested than there are eligible pixels."""

    def __init__(self, requested: int, available: int):
        self.requested = requested
        self.available = available
        super().__init__(
            f"cannot draw k={requested} samples from {available} eligible pixels"
        )
