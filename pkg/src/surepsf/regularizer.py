"""Circulant finite-difference regularizers ``T.T @ T`` as spectra.

The order-``r`` operator is the periodic first difference applied ``r``
times along each axis, summed over the two axes.  Its exact eigenvalues are::

    (4 sin^2(pi kx))^r + (4 sin^2(pi ky))^r

By default the per-axis symbol is normalized to a maximum of one,
``sin^{2r}(pi k)``, which puts ``lambda`` on the customary scale; the two
conventions differ by the constant ``4**r``, absorbed into ``lambda``.
Non-integer ``r`` is defined through the same formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterDomainError
from .spectral import frequency_grid

__all__ = ["RegularizerSpec", "regularizer_spectrum", "regularizer_order_derivative"]


@dataclass(frozen=True)
class RegularizerSpec:
    """Finite-difference order ``r`` (1 = gradient, 2 = second differences).

    ``normalized=False`` gives the exact eigenvalues of ``T.T @ T``.
    """

    order: float = 1.0
    normalized: bool = True

    def __post_init__(self):
        if not (self.order > 0) or not np.isfinite(self.order):
            raise ParameterDomainError(f"regularizer order must be > 0, got {self.order}")


def _as_spec(spec):
    if isinstance(spec, RegularizerSpec):
        return spec
    return RegularizerSpec(float(spec))


def _axis_symbols(shape, normalized):
    kx, ky = frequency_grid(shape)
    c = 1.0 if normalized else 4.0
    return c * np.sin(np.pi * kx) ** 2, c * np.sin(np.pi * ky) ** 2


def regularizer_spectrum(spec, shape) -> np.ndarray:
    """Eigenvalues of ``T.T @ T``; real, nonnegative, zero only at DC."""
    spec = _as_spec(spec)
    sx, sy = _axis_symbols(shape, spec.normalized)
    return sx**spec.order + sy**spec.order


def regularizer_order_derivative(spec, shape) -> np.ndarray:
    """``d D / d r``; terms with a zero symbol are 0 by continuity."""
    spec = _as_spec(spec)
    out = np.zeros(tuple(shape))
    for s in _axis_symbols(shape, spec.normalized):
        pos = s > 0
        out[pos] += np.log(s[pos]) * s[pos] ** spec.order
    return out
