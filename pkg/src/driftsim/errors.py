"""Exception hierarchy shared across the package.

Configuration problems (bad specs, dimension mismatches, invalid
distribution parameters) are distinguished from runtime numerical
failures so the CLI can map them to distinct exit codes.
"""


class DriftsimError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(DriftsimError):
    """Invalid configuration: bad kinds, dimension mismatches, missing capabilities."""


class DomainError(DriftsimError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedOracleError(DriftsimError):
    """The requested closed-form oracle does not exist for this target kind."""


class InsufficientDataError(DriftsimError):
    """An aggregate was requested from an empty collection."""


class NonConvergenceError(DriftsimError):
    """An iterative evaluation hit its term cap before converging."""


class NumericalFailureError(DriftsimError):
    """A computation produced non-finite values and was aborted loudly."""


class ApproximationFailure(DriftsimError):
    """A validated approximation could not reach its accuracy budget.

    Carries the measured sup errors of the final attempt.
    """

    def __init__(self, message, sup_value_err=None, sup_grad_err=None):
        super().__init__(message)
        self.sup_value_err = sup_value_err
        self.sup_grad_err = sup_grad_err
