"""Exception types raised across the package."""


class SurePsfError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SurePsfError, ValueError):
    """Malformed image or spectrum (wrong rank, too small, non-finite)."""


class DimensionMismatchError(SurePsfError, ValueError):
    """Two grids that must share a shape do not."""


class SymmetryError(SurePsfError, ValueError):
    """A spectrum that should describe a real image is not conjugate-symmetric."""

    def __init__(self, residual, tol):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"spectrum is not conjugate-symmetric: max imaginary residual "
            f"{residual:.3e} exceeds {tol:.1e}"
        )


class ParameterDomainError(SurePsfError, ValueError):
    """A model parameter lies outside its admissible domain."""


class DegenerateMixtureError(SurePsfError, ValueError):
    """All mixture weights vanished after projection."""


class DegenerateDataError(SurePsfError, ArithmeticError):
    """Data carry no usable signal for an update (e.g. zero denominator)."""


class DegenerateRatioError(DegenerateDataError):
    """Fixed-point ratio denominator underflowed."""


class TilingError(SurePsfError, ValueError):
    """Image cannot be tiled, or every patch failed."""
