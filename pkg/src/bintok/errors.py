"""Exception taxonomy shared by all bintok modules.

The CLI maps these onto exit codes: config problems exit 2, capacity and
domain problems exit 3, training divergence exit 4.
"""


class BintokError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BintokError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(BintokError, ValueError):
    """A value is outside the domain an operation is defined on."""


class NumericError(BintokError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class CapacityError(BintokError, ValueError):
    """Content does not fit the available space (canvas, context window)."""


class EncodingError(BintokError, ValueError):
    """Text contains characters outside the supported alphabet."""


class ConfigError(BintokError, ValueError):
    """A configuration document is malformed or inconsistent."""


class TrainingDivergedError(BintokError, RuntimeError):
    """Training loss became non-finite.

    ``last_checkpoint`` points at the most recent good checkpoint when the
    training run was writing them, otherwise it is None.
    """

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class UnsupportedMetricError(BintokError, ValueError):
    """The requested metric is intentionally not implemented."""
