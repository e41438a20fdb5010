"""Exception types shared across the package."""


class AvrnError(Exception):
    """Base class for package errors."""


class ShapeError(AvrnError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class EmptySequenceError(AvrnError, ValueError):
    """A sequence operation received zero timesteps."""


class NonFiniteError(AvrnError, ArithmeticError):
    """A tensor operation produced NaN or Inf entries."""


class ConfigError(AvrnError, ValueError):
    """Invalid run or training configuration."""


class DataError(AvrnError, ValueError):
    """A dataset file is missing, malformed, or fails validation."""


class AlignmentError(DataError):
    """Audio and visual streams of a video cannot be aligned."""


class DivergenceError(AvrnError, RuntimeError):
    """Training loss became non-finite."""
