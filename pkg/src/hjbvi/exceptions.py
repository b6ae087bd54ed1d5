"""Exception types shared across the package."""


class HJBVIError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(HJBVIError):
    """Invalid measure, grid, scheme, or run configuration."""


class IntegrationError(HJBVIError):
    """A jump-measure integral diverged or produced non-finite weights."""


class SchemeValidationError(ConfigurationError):
    """Scheme parameters violate a monotonicity or contraction precondition."""


class ConvergenceError(HJBVIError):
    """Picard iteration failed to reach tolerance.

    Carries the timestep index, component index, last increment, and the
    estimated contraction ratio observed before giving up.
    """

    def __init__(self, message, *, step=None, component=None,
                 last_increment=None, est_ratio=None):
        super().__init__(message)
        self.step = step
        self.component = component
        self.last_increment = last_increment
        self.est_ratio = est_ratio
