"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes:
``ConfigError`` -> 2, ``NumericError`` -> 3, ``ZoneFileError`` -> 4.
"""

from __future__ import annotations


class ManeuverZonesError(Exception):
    """Base class for all package errors."""


class ConfigError(ManeuverZonesError, ValueError):
    """Invalid configuration or argument.

    ``path`` names the offending field (dotted) when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ShapeError(ConfigError):
    """Grid / dimension mismatch between operands."""


class BoundsError(ConfigError):
    """A control value lies outside its admissible interval."""


class CFLError(ConfigError):
    """Requested time step violates the CFL bound."""

    def __init__(self, dt: float, dt_max: float):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"time step {dt:.6g} exceeds CFL limit; maximal admissible dt is {dt_max:.6g}")


class NumericError(ManeuverZonesError):
    """Failure inside a numerical routine (solver, feasibility, ...)."""


class OutOfDomainError(NumericError, ValueError):
    """Query state outside a non-periodic grid dimension."""

    def __init__(self, dim: int, name: str, value: float, lower: float, upper: float):
        self.dim = dim
        self.name = name
        self.value = value
        super().__init__(f"dimension {dim} ({name}) value {value:.6g} outside [{lower:.6g}, {upper:.6g}]")


class FeasibilityError(NumericError):
    """A reference trajectory cannot respect the control bounds."""

    def __init__(self, message: str, bound: str):
        self.bound = bound
        super().__init__(message)


class UndefinedRatioError(NumericError, ZeroDivisionError):
    """Volume ratio against an empty baseline."""


class ZoneFileError(ManeuverZonesError, OSError):
    """Base for zone file format problems."""


class VersionMismatchError(ZoneFileError):
    pass


class TruncatedPayloadError(ZoneFileError):
    pass


class HeaderConsistencyError(ZoneFileError):
    pass
