"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and DataError to exit code 3;
everything else is an ordinary failure.
"""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Unreadable or malformed input data (files, sequences, headers)."""


class ShapeError(ValueError):
    """Array dimensions incompatible with the requested operation."""


class InvalidInputError(ValueError):
    """Input is structurally valid but outside an operation's domain."""


class NotAPeakError(InvalidInputError):
    """The queried state is not a local maximum of the score."""


class NumericalError(RuntimeError):
    """Numerical failure (non-finite values) during an iterative solve."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
