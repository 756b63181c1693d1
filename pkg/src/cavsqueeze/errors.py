"""Exception hierarchy shared by all solvers."""


class SqueezingError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(SqueezingError, ValueError):
    """A physical parameter or argument is outside its allowed domain."""


class CapacityError(SqueezingError):
    """The requested problem is too large for the dense Dicke solver."""


class IntegrationError(SqueezingError, ArithmeticError):
    """A numerical integration produced non-finite values.

    Attributes
    ----------
    step : int or None
        Index of the step at which the failure was detected.
    detail : str
        The message without the step suffix.
    """

    def __init__(self, message, step=None):
        self.detail = message
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class NumericalInstabilityError(IntegrationError):
    """The covariance matrix lost positive definiteness."""


class FockCutoffError(IntegrationError):
    """Population leaked into the highest retained Fock level."""


class DecompositionError(IntegrationError):
    """The K factor of a V = M K^-1 decomposition became singular."""


class ConfigError(SqueezingError, ValueError):
    """A scenario configuration is malformed or incomplete."""
