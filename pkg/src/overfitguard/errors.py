"""Exception types shared across the package."""


class OverfitGuardError(Exception):
    """Base class for all errors raised by this package."""


class InvalidCurve(OverfitGuardError):
    """A loss curve is too short or otherwise unusable for the operation."""


class InvalidInput(OverfitGuardError):
    """An input value violates an operation's precondition."""


class InvalidValue(OverfitGuardError):
    """A numeric value is non-finite or out of its allowed range."""


class ParseError(OverfitGuardError):
    """A text input could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateEpoch(OverfitGuardError):
    """The same epoch number appears twice in one curve."""


class DegenerateTraining(OverfitGuardError):
    """Training data contains only one class."""


class StratificationError(OverfitGuardError):
    """A class has too few examples for stratified cross-validation."""


class ModelFormatError(OverfitGuardError):
    """A model file is unreadable or has an unsupported schema."""


class UndefinedCorrelation(OverfitGuardError):
    """Correlation of a constant series is undefined."""


class DegenerateCalibration(OverfitGuardError):
    """Threshold calibration needs both classes present."""


class SegmentTooShort(OverfitGuardError):
    """A heuristic-labelling segment has fewer than two epochs."""


class ConfigError(OverfitGuardError):
    """A monitor/prevention configuration is inconsistent."""


class OutOfOrderEpoch(OverfitGuardError):
    """Observed epochs must be strictly increasing."""


class TrainingDiverged(OverfitGuardError):
    """MLP training hit a non-finite loss; carries the partial history."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class SchemaError(OverfitGuardError):
    """A tabular dataset file does not match the declared schema."""


class InvalidSample(OverfitGuardError):
    """A statistical test received an empty sample."""
