"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (shape, range, parity)."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class NumericalFailure(ArithmeticError):
    """A computation produced non-finite values."""


class IntegrationFailure(NumericalFailure):
    """An ODE integration step went non-finite.

    The failing time is kept on ``self.t``.
    """

    def __init__(self, message, t):
        super().__init__(f"{message} (t={t})")
        self.t = t


class InvariantViolation(AssertionError):
    """A property guaranteed by the theory failed to hold numerically."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``pointer`` is a JSON pointer to the offending key."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
