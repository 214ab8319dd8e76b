"""Exception types shared across the package."""


class DmaNomaError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(DmaNomaError):
    """Raised for malformed scenario or experiment configuration."""


class DegenerateGeometryError(DmaNomaError):
    """Raised when a user position coincides with an array element."""


class InfeasibleUncertaintyError(DmaNomaError):
    """Raised when the position-error radius reaches the array itself."""


class OptimizationFailureError(DmaNomaError):
    """Raised when a convex subproblem solver fails numerically."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InfeasibleProblemError(DmaNomaError):
    """Raised when a subproblem is infeasible; carries the offending users."""

    def __init__(self, message, users=None):
        super().__init__(message)
        self.users = users or []


class InfeasibleSplitError(DmaNomaError):
    """Raised when a group power cannot cover the FU QoS pin."""

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group
