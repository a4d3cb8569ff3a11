"""Exception hierarchy shared by all modules."""


class LightRayError(Exception):
    """Base class for toolkit errors."""


class InvalidInputError(LightRayError, ValueError):
    """Argument violates a documented precondition."""


class DomainError(LightRayError, ValueError):
    """A point lies outside the box on which a metric is defined."""


class IntegrationError(LightRayError, RuntimeError):
    """ODE integration failed (step underflow or non-finite state)."""


class NoSolutionError(LightRayError, RuntimeError):
    """Shooting did not converge; carries a diagnostic message."""


class SingularJacobianError(LightRayError, RuntimeError):
    """The exponential map is degenerate (conjugate pair)."""


class PaddingError(LightRayError, ValueError):
    """FFT padding too small to prevent wraparound of the kernel."""


class ShapeError(LightRayError, ValueError):
    """Grid or ray data shapes do not match."""


class UnsupportedOrderError(LightRayError, ValueError):
    """Parametrix requested for a dimension other than n = 2, 3."""


class ResolutionError(LightRayError, ValueError):
    """Sampling too coarse for the requested quadrature or fit."""


class FitError(LightRayError, RuntimeError):
    """Degenerate regression (too few or collinear points)."""


class FormatError(LightRayError, ValueError):
    """Malformed binary grid file."""


class SynthesisError(LightRayError, ValueError):
    """A conormal recipe cannot be realized on the requested grid."""
