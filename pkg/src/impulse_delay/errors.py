"""Exception and warning types raised by the solvers, simulator and CLI."""


class ImpulseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ImpulseError):
    pass


class DomainError(ImpulseError, ValueError):
    pass


class IntegrabilityError(ImpulseError):
    pass


class DegeneratePolicyError(ImpulseError):
    pass


class NoThresholdError(ImpulseError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoBandError(ImpulseError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class OracleError(ImpulseError):
    pass


class NoActionError(ImpulseError):
    """Raised when discounting is too weak for any intervention to pay off (r <= b)."""


class SimulationError(ImpulseError):
    pass


class WindowWarning(UserWarning):
    """An optimizer landed on the edge of its search window."""


class HypothesisWarning(UserWarning):
    """A sufficient condition for existence/uniqueness could not be confirmed numerically."""


class HorizonWarning(UserWarning):
    """The truncated simulation horizon leaves a non-negligible discounted tail."""
