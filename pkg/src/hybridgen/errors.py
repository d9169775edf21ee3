"""Exception types shared across the package.

CLI exit-code mapping: ValidationError and ParseError exit 2,
PipelineError (and subclasses) exit 3.
"""

from __future__ import annotations


class HybridgenError(Exception):
    """Base class for all package errors."""


class ValidationError(HybridgenError):
    """Structured input violates a documented invariant."""


class ParseError(HybridgenError):
    """A file could not be parsed.

    Carries the source location when the underlying parser provides one.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class VersionError(ParseError):
    """File declares a format version this build does not read."""

    def __init__(self, found: object, expected: str):
        super().__init__(f"unsupported format version {found!r}, expected {expected!r}")
        self.found = found
        self.expected = expected


class PipelineError(HybridgenError):
    """A generation run could not meet its target.

    Carries the stage report so callers can inspect the failure taxonomy.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class SamplingError(PipelineError):
    """Scene sampling exhausted its rejection budget."""


class RecordingNotFoundError(HybridgenError):
    """Recorded-response mode has no file for a request hash."""

    def __init__(self, digest: str, directory: str):
        super().__init__(f"recording not found: {digest}.json in {directory}")
        self.digest = digest


class TransportError(HybridgenError):
    """A remote call failed after retries (timeout, connection, non-2xx)."""
