"""Exception types shared across the package."""


class RctgenError(Exception):
    """Base class for all package errors."""


class SchemaError(RctgenError):
    """Input data violates the expected schema (columns, types, tokens)."""


class DegenerateSampleError(RctgenError):
    """A sample is too small or one-sided for the requested operation."""


class SpecError(RctgenError):
    """An invalid specification / configuration object."""


class UnsupportedProportionError(SpecError):
    """Missingness proportion outside the supported range for a mechanism."""


class PoolExhaustedError(RctgenError):
    """The simulated selection step produced an empty trial sample."""


class InfeasibleCalibrationError(RctgenError):
    """Target moments lie outside the convex hull of the trial moments."""


class NumericalError(RctgenError):
    """An iterative solver failed to reach its tolerance."""


class ConvergenceError(RctgenError):
    """An iterative fit did not converge and no status channel exists."""
