"""Exception types shared across the package."""


class SubsampleNNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SubsampleNNError):
    """Operand shapes are incompatible."""


class ParameterError(SubsampleNNError):
    """A parameter is outside its valid range."""


class FormatError(SubsampleNNError):
    """A binary file does not match the expected layout."""


class DegenerateInputError(SubsampleNNError):
    """Input admits no valid sampling distribution (e.g. all norms zero)."""


class NormBoundError(SubsampleNNError):
    """A vector violates the norm bound required by a transform."""


class PreconditionError(SubsampleNNError):
    """An operation was called on inputs it is not defined for."""


class NumericError(SubsampleNNError):
    """A computation produced NaN or Inf."""
