"""Error taxonomy shared by all modules.

Callers that drive the CLI map these onto exit codes: bad inputs exit 2,
violated constraints and failed tolerance gates exit 1, iteration divergence
exit 3.
"""


class QbError(Exception):
    """Base class for all package errors."""


class DomainError(QbError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(QbError):
    """A value left the representable floating-point range."""


class AccuracyError(QbError):
    """A quadrature or series could not meet its accuracy target."""


class GridError(QbError):
    """Grids are incompatible (alignment, spacing, or coverage)."""


class GeometryError(QbError):
    """A geometric separation condition failed (roots, sectors, margins)."""


class ValidationError(QbError):
    """A structural constraint on a problem instance is violated."""


class FitError(QbError):
    """A regression problem is ill-posed or ill-conditioned."""


class DivergenceError(QbError):
    """A fixed-point iteration failed to contract."""
