"""Exception types shared across the package."""


class CollapseMcError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CollapseMcError):
    """A physics or grid parameter violates its precondition."""


class IntegrationFailureError(CollapseMcError):
    """Deterministic integrator could not reach the requested tolerance."""

    def __init__(self, message, *, t=None, n_steps=None, error_estimate=None):
        super().__init__(message)
        self.t = t
        self.n_steps = n_steps
        self.error_estimate = error_estimate


class NumericFailureError(CollapseMcError):
    """NaN/overflow encountered while stepping a trajectory."""

    def __init__(self, message, *, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class DegenerateTrajectoryError(CollapseMcError):
    """A trajectory state has collapsed to zero norm and cannot be normalized."""


class DegenerateEnsembleError(CollapseMcError):
    """All importance weights of an ensemble vanish."""


class NotPositiveSemidefiniteError(CollapseMcError):
    """A kernel is negative beyond the allowed clipping floor."""

    def __init__(self, message, *, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class QuadratureFailureError(CollapseMcError):
    """Successive quadrature refinements did not converge."""

    def __init__(self, message, *, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class FitError(CollapseMcError):
    """A rate fit did not meet its quality threshold; carries the data."""

    def __init__(self, message, *, times=None, values=None, r_squared=None):
        super().__init__(message)
        self.times = times
        self.values = values
        self.r_squared = r_squared


class UnsupportedRegimeError(CollapseMcError):
    """Inputs are outside the documented regime of an operation."""


class ConfigError(CollapseMcError):
    """A scenario configuration is invalid; names the offending field."""

    def __init__(self, message, *, field=None):
        super().__init__(message)
        self.field = field
