"""Exception hierarchy shared by all modules."""


class HebbianError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(HebbianError, ValueError):
    """Shapes, indices or settings are inconsistent."""


class InputError(HebbianError, ValueError):
    """A data argument is malformed (non-finite, too short, ...)."""


class NumericDivergenceError(HebbianError, ArithmeticError):
    """Plastic weights became non-finite during a rollout."""


class PersistenceError(HebbianError, OSError):
    """A checkpoint, record or coefficient file could not be read or written."""
