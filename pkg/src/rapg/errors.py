"""Exception types raised across the package."""


class RapgError(Exception):
    """Base class for package errors."""


class AntipodalPoints(RapgError):
    """The minimizing geodesic between two points is not unique."""


class DomainError(RapgError):
    """An argument lies outside the domain where a formula is valid."""


class NotOrthonormal(RapgError):
    pass


class NotSameOrthant(RapgError):
    pass


class ShapeMismatch(RapgError, ValueError):
    pass


class DimensionTooLarge(RapgError):
    pass


class MaxItersExceeded(RapgError):
    pass


class NonConvexBall(RapgError):
    """The inner solver could not decrease the model below its value at zero."""


class InvalidParams(RapgError, ValueError):
    pass


class LEscalationDiverged(RapgError):
    """The Lipschitz estimate grew past its hard cap."""


class InsufficientTail(RapgError):
    pass


class NonPositiveGap(RapgError):
    pass


class NotConverged(RapgError):
    pass
