"""Exception and warning classes shared across the package."""


class EpcGazeError(Exception):
    """Base class for all package errors."""


class InvalidInput(EpcGazeError, ValueError):
    pass


class DimensionMismatch(EpcGazeError, ValueError):
    pass


class SingularSystem(EpcGazeError, ArithmeticError):
    pass


class NonFiniteUpdate(EpcGazeError, FloatingPointError):
    pass


class UnknownSubject(EpcGazeError, KeyError):
    pass


class TooFewSamples(EpcGazeError, ValueError):
    pass


class ConfigError(EpcGazeError, ValueError):
    pass


class CheckpointError(EpcGazeError, ValueError):
    pass


class DegenerateRunWarning(UserWarning):
    """Too few target samples found enough neighbors to contribute to EPC."""


class StageWarning(UserWarning):
    """Adaptation was started from a model that was never pretrained."""
