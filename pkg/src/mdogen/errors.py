"""Exception hierarchy shared by all modules."""


class MdogenError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(MdogenError, ValueError):
    """Inconsistent sizes, bad settings or an invalid scenario."""


class InvalidDimensionError(ConfigurationError):
    pass


class InvalidPartitionError(ConfigurationError):
    pass


class NumericalError(MdogenError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class SingularSystemError(NumericalError):
    pass


class SingularAdjointError(NumericalError):
    pass


class EmptyDomainError(NumericalError):
    pass


class DivergenceError(NumericalError):
    """A fixed-point iteration produced a non-finite value.

    The iterates computed so far are kept in ``history`` and the design
    point, when known, in ``x``.
    """

    def __init__(self, message, history=(), x=None):
        super().__init__(message)
        self.history = list(history)
        self.x = x


class OptimizationFailure(NumericalError):
    """Every start of a multi-start run raised an error."""

    def __init__(self, message, statuses=()):
        super().__init__(message)
        self.statuses = list(statuses)
