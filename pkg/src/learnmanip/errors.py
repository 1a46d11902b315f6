"""Exception hierarchy shared across the package."""


class LearnManipError(Exception):
    """Base class for all package errors."""


class ShapeError(LearnManipError, ValueError):
    def __init__(self, op, expected, actual):
        self.op = op
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: expected shape {expected}, got {actual}")


class NumericOverflowError(LearnManipError, FloatingPointError):
    """An operation produced NaN or Inf."""


class ContractError(LearnManipError, ValueError):
    """A precondition of an operation was violated by the caller."""


class CapabilityError(LearnManipError, RuntimeError):
    """The requested computation is not supported by the recorded graph."""


class ConfigError(LearnManipError, ValueError):
    pass


class DataError(LearnManipError, ValueError):
    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details


class ParseError(DataError):
    pass


class TrainingDiverged(LearnManipError, RuntimeError):
    def __init__(self, message, last_report=None):
        super().__init__(message)
        self.last_report = last_report
