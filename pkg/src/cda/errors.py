"""Exception types shared across the package."""


class CdaError(Exception):
    """Base class for all domain errors raised by this package.

    The CLI maps these to exit code 1; anything else is a bug.
    """


class DataError(CdaError):
    """Malformed or degenerate input data (parsing, shapes, constant columns)."""


class FitError(CdaError):
    """A solver or estimator could not produce a valid result."""
