class LTCRError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(LTCRError, ValueError):
    """Invalid experiment or component configuration."""


class ContractViolation(LTCRError, ValueError):
    """An operation was called with inputs outside its contract."""


class StepsizeError(LTCRError, ArithmeticError):
    """Gradient descent diverged for the chosen step size."""


class RunFailure(LTCRError, RuntimeError):
    """An experiment run failed after it started."""
