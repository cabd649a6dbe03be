"""Exception types shared across the package."""


class DRBError(Exception):
    """Base class for all package errors."""


class InputError(DRBError, ValueError):
    """Invalid argument: out-of-range coordinate, bad strategy, bad config."""


class ConsistencyError(DRBError):
    """A cached histogram no longer matches the profile it is queried with."""


class DegenerateFitError(DRBError):
    """A log-log fit has too few distinct points to define a slope."""


class UnsupportedGeometryError(DRBError):
    """Operation not defined for the given geometry (e.g. routing on geo data)."""


class UndefinedCorrelationError(DRBError):
    """Correlation requested over values with zero variance."""


class ConvergenceError(DRBError):
    """Dynamics hit their step limit without settling."""
