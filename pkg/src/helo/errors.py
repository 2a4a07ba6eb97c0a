"""Exception types shared across the package."""


class HeloError(Exception):
    """Base class for all package errors."""


class DimensionError(HeloError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(HeloError):
    """A structural setting (head count, token count, flag combination) is invalid."""


class ValidationError(HeloError):
    """Input data violates its declared schema or allowed range."""


class SplitError(ValidationError):
    """A train/test split cannot be formed from the given samples."""


class NumericalError(HeloError):
    """A computation produced non-finite values."""


class DivergenceError(NumericalError):
    """Training loss became non-finite."""


class DeterminismError(HeloError):
    """A function expected to be deterministic returned differing values."""


class EmptySetError(HeloError):
    """An aggregate was requested over an empty collection."""


class IncompleteTableError(HeloError):
    """A rank table is missing scores for some method/metric cell."""
