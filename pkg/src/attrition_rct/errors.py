"""Exception hierarchy shared by all modules."""


class AttritionError(Exception):
    """Base class for every error raised by the package."""


class SpecificationError(AttritionError, ValueError):
    """Invalid data-generating process or configuration."""


class NumericError(AttritionError, ArithmeticError):
    """Non-finite values produced while evaluating a model."""


class CapabilityError(AttritionError, NotImplementedError):
    """Requested computation is unsupported for this model family."""


class DesignError(AttritionError, ValueError):
    """Invalid experimental design input (odd n, empty stratum, ...)."""


class EstimationError(AttritionError, ArithmeticError):
    """An estimator is undefined on the given sample."""


class EstimandUndefinedError(AttritionError, ArithmeticError):
    """A population quantity has a zero denominator."""


class IngestionError(AttritionError, ValueError):
    """Malformed input data file."""
