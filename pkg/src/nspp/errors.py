"""Exception hierarchy shared by the library and the CLI."""


class NSPPError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NSPPError, ValueError):
    """Invalid user configuration or geometry (CLI exit code 2)."""


class ValidationError(ConfigurationError):
    """Input data failed a consistency check (CLI exit code 2)."""


class CovariateError(NSPPError, ValueError):
    """A covariate could not be evaluated at a requested location."""


class NumericError(NSPPError, ArithmeticError):
    """A non-finite or degenerate numerical quantity (CLI exit code 3)."""


class FitError(NumericError):
    """Newton iterations for the Poisson likelihood did not converge."""

    def __init__(self, message, coeffs=None, grad_norm=None):
        super().__init__(message)
        self.coeffs = coeffs
        self.grad_norm = grad_norm


class CollinearityError(FitError):
    """Observed information is (numerically) singular."""


class ChainError(NSPPError, RuntimeError):
    """An MCMC chain aborted; carries the iteration and a state dump."""

    def __init__(self, message, iteration, state_dump):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.state_dump = state_dump
