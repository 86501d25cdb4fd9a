"""Exceptions raised by the migsched library.

Each error also derives from the closest builtin so callers can catch either.
Scheduling rejections are not errors: schedulers return ``REJECT``.
"""

from __future__ import annotations


class MigSchedError(Exception):
    """Base class for all library errors."""


class SpanRangeError(MigSchedError, ValueError):
    """Raised when a slice span does not fit inside the 8 memory-slice positions."""


class InfeasibleIndexError(MigSchedError, ValueError):
    """Raised when a start index is not a legal placement index for the profile."""


class SpanConflictError(MigSchedError):
    """Raised when a span overlaps slices that are already occupied."""


class InstanceIdError(MigSchedError, KeyError):
    """Raised for unknown or duplicate instance ids."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep plain messages.
        return str(self.args[0]) if self.args else ""


class UnknownProfileError(MigSchedError, KeyError):
    """Raised when a profile name is not in the catalog."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DomainError(MigSchedError, ValueError):
    """Raised when an operation is undefined for its input (e.g. an empty cluster)."""


class ConfigError(MigSchedError, ValueError):
    """Raised for invalid simulation configs, experiment specs or distributions."""


class ResultSchemaError(MigSchedError, ValueError):
    """Raised when result files are malformed or cannot be compared."""


class SimulationInvariantError(MigSchedError, AssertionError):
    """Raised when the simulator detects an internal inconsistency. Always a bug."""


class OccupancyFormatError(MigSchedError, ValueError):
    """Raised for occupancy strings that are not 8 characters over '.' and '#'."""
