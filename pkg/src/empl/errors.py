"""Exception types shared across the package.

Every error raised by this package derives from EmplError so callers can
catch one base type at the boundary.  The CLI maps subtypes to exit codes.
"""

from __future__ import annotations


class EmplError(Exception):
    """Base class for all package errors."""


class ConfigError(EmplError):
    """Invalid, unknown, or out-of-range configuration value.

    ``key`` names the offending field when known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DegenerateInputError(EmplError):
    """Input that makes the requested operation undefined (zero vector, empty set)."""


class ShapeError(EmplError):
    """Operands whose dimensions do not line up."""


class UnknownClassError(EmplError):
    """Class id absent from the vocabulary or from the expected pool."""


class TaskError(EmplError):
    """Malformed task: overlapping or empty class pools, ids outside the vocabulary."""


class NumericalError(EmplError):
    """NaN or inf encountered where a finite value is required."""


class DivergenceError(NumericalError):
    """Iterative procedure produced a non-finite iterate.

    ``step`` is the 0-based iteration at which divergence was detected.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class FormatError(EmplError):
    """Malformed binary or JSON artifact on disk.

    ``offset`` is the byte position where decoding failed, when applicable.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset
