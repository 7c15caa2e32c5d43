"""Blind PSF estimation for Tikhonov/Wiener deconvolution by SURE minimization.

Everything runs on periodic (circulant) operators in the Fourier domain:
PSF and regularizer spectra, SURE and its derivatives, the fixed-point
estimator, a Monte-Carlo harness and a patch-wise pipeline.
"""

__version__ = "0.1.0"

from .estimator import (
    IterationTrace,
    OptimizerConfig,
    Status,
    estimate,
    estimate_with_ideal_regularizer,
    lambda_solve,
)
from .exceptions import (
    DegenerateDataError,
    DegenerateMixtureError,
    DegenerateRatioError,
    DimensionMismatchError,
    InvalidInputError,
    ParameterDomainError,
    SurePsfError,
    SymmetryError,
    TilingError,
)
from .psf import GaussianPSF, LaplacianPSF, MixturePSF, psf_from_dict, psf_from_text
from .regularizer import RegularizerSpec, regularizer_spectrum
from .spectral import forward_dft, inverse_dft
from .sure import (
    IdealRegularizer,
    SureContext,
    gamma_fixed_point_ratio,
    lambda_update,
    sure_gamma_gradient,
    sure_value,
    wiener_solve,
)

__all__ = [
    "__version__",
    "IterationTrace",
    "OptimizerConfig",
    "Status",
    "estimate",
    "estimate_with_ideal_regularizer",
    "lambda_solve",
    "DegenerateDataError",
    "DegenerateMixtureError",
    "DegenerateRatioError",
    "DimensionMismatchError",
    "InvalidInputError",
    "ParameterDomainError",
    "SurePsfError",
    "SymmetryError",
    "TilingError",
    "GaussianPSF",
    "LaplacianPSF",
    "MixturePSF",
    "psf_from_dict",
    "psf_from_text",
    "RegularizerSpec",
    "regularizer_spectrum",
    "forward_dft",
    "inverse_dft",
    "IdealRegularizer",
    "SureContext",
    "gamma_fixed_point_ratio",
    "lambda_update",
    "sure_gamma_gradient",
    "sure_value",
    "wiener_solve",
]
