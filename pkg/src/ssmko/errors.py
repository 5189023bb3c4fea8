"""Exception hierarchy shared across the package."""


class SsmkoError(Exception):
    """Base class for all package errors."""


class DimensionError(SsmkoError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(SsmkoError, ArithmeticError):
    """A NaN or otherwise illegal numeric value was encountered."""


class InputError(SsmkoError, ValueError):
    """Token ids or other user input fall outside the model's contract."""


class ContractError(SsmkoError, ValueError):
    """An argument violates a documented precondition."""


class SpecError(SsmkoError, ValueError):
    """A knockout specification is malformed or does not fit the model."""


class ClassificationError(SsmkoError, ValueError):
    """Feature classification is impossible for the given layer."""


class UndefinedBaselineError(SsmkoError, ZeroDivisionError):
    """Relative change requested against a zero baseline probability."""


class ConfigError(SsmkoError, ValueError):
    """A task, training or experiment configuration is inconsistent."""


class TrainingFault(SsmkoError, RuntimeError):
    """Training produced a non-finite loss.

    ``step`` identifies where it happened and ``log`` keeps the metrics
    collected so far.
    """

    def __init__(self, message, step=None, log=None):
        super().__init__(message)
        self.step = step
        self.log = list(log or [])


class ArchiveError(SsmkoError, ValueError):
    """A weight archive is malformed."""
