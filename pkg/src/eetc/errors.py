"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EETCError(Exception):
    """Base class for all package errors."""


class ValidationError(EETCError, ValueError):
    """Input data violates a documented invariant."""


class DimensionError(EETCError, ValueError):
    """Array lengths do not match the journey discretization."""


class AssemblyError(EETCError):
    """The conic program could not be assembled.

    ``family`` names the offending constraint family (e.g. ``"speed_limit"``).
    """

    def __init__(self, family: str, message: str):
        super().__init__(f"[{family}] {message}")
        self.family = family


class TrackParseError(EETCError, ValueError):
    """A track or key-value input file is malformed."""

    def __init__(self, path: str, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class AlreadyExactError(EETCError):
    """The pivot segment carries no relaxation slack to exploit."""


class PerturbationError(EETCError):
    """A descent certificate could not be built numerically."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PreconditionError(EETCError):
    """A construction precondition (e.g. positive first-segment work) fails."""
