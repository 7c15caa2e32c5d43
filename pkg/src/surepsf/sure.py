"""SURE for Wiener/Tikhonov deconvolution and its closed-form derivatives.

For a PSF spectrum ``h``, penalty spectrum ``P`` (``lambda * D`` for
Tikhonov, ``N sigma^2 / |u0_hat|^2`` for the ideal Wiener filter) and observed
spectrum ``b``, define ``m = 1 / (|h|^2 + P)``.  Then::

    u_hat           = conj(h) m b
    ||Hu - b||^2    = (1/N) sum (P m)^2 |b|^2
    trace(H M H.T)  = sum |h|^2 m
    SURE            = -N sigma^2 + ||Hu - b||^2 + 2 sigma^2 trace(H M H.T)

All derivatives below are single Hadamard reductions on these arrays.  For a
parameter ``gamma`` with derivative spectrum ``h_g`` write
``q = Re(conj(h) h_g)``; the fixed-point ratio is ``num / den`` with::

    num = -sigma^2 sum P m^2 q          (= -sigma^2 lambda trace_Re(M^2 T'T H' H_g))
    den = -(1/N) sum P^2 m^3 q |b|^2    (= b' A' (H M H_g')_Re A b,  A = HMH' - I)

and ``dSURE/dgamma = 4 (den - num) = 4 den (1 - R)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import (
    DegenerateDataError,
    DegenerateRatioError,
    DimensionMismatchError,
    InvalidInputError,
    ParameterDomainError,
)
from .regularizer import RegularizerSpec, regularizer_order_derivative, regularizer_spectrum
from .spectral import as_image, forward_dft, symmetry_residual

__all__ = [
    "SureContext",
    "IdealRegularizer",
    "SureEvaluator",
    "wiener_solve",
    "sure_value",
    "sure_gamma_gradient",
    "gamma_fixed_point_ratio",
    "lambda_update",
    "sure_lambda_gradient",
    "sure_hessian_entry",
    "sure_reg_order_gradient",
]

RATIO_EPS = 1e-300
DENOM_EPS = 1e-300


@dataclass(frozen=True, eq=False)
class SureContext:
    """Per-problem data: DFT of the observation, noise variance, regularizer."""

    b_hat: np.ndarray
    sigma2: float
    reg: np.ndarray
    reg_spec: RegularizerSpec = RegularizerSpec()

    def __post_init__(self):
        if not (self.sigma2 > 0) or not np.isfinite(self.sigma2):
            raise ParameterDomainError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.b_hat.shape != self.reg.shape:
            raise DimensionMismatchError("b_hat and regularizer shapes differ")
        if symmetry_residual(self.b_hat) > 1e-8:
            raise InvalidInputError("b_hat is not the DFT of a real image")

    @classmethod
    def from_image(cls, b, sigma2, reg=1.0):
        """``reg`` is a :class:`RegularizerSpec` or just the order ``r``."""
        b = as_image(b)
        spec = reg if isinstance(reg, RegularizerSpec) else RegularizerSpec(float(reg))
        return cls(forward_dft(b), float(sigma2), regularizer_spectrum(spec, b.shape), spec)

    @property
    def shape(self):
        return self.b_hat.shape

    @property
    def N(self):
        return self.b_hat.size

    @cached_property
    def b_pow(self):
        return np.abs(self.b_hat) ** 2


@dataclass(frozen=True, eq=False)
class IdealRegularizer:
    """``v = N / |u0_hat|^2`` from a known clean image (simulations only).

    ``|u0_hat|^2 / N`` is the power spectrum of ``u0`` in the unnormalized
    DFT convention, so ``sigma^2 v`` is the noise-to-signal ratio of the
    minimum-MSE Wiener filter.  Without the ``N`` the penalty is ``N`` times
    too weak and the PSF estimates run away.
    """

    v_spectrum: np.ndarray

    @classmethod
    def from_image(cls, u0, floor_rel=1e-12):
        p = np.abs(forward_dft(u0)) ** 2
        return cls(p.size / np.maximum(p, floor_rel * p.max()))


def _check_h(ctx, *spectra):
    for s in spectra:
        if np.shape(s) != ctx.shape:
            raise DimensionMismatchError(f"spectrum shape {np.shape(s)} != {ctx.shape}")


class SureEvaluator:
    """SURE and derivative terms at a fixed ``(h, lambda)``.

    Caches ``|h|^2``, the penalty and ``m`` so the estimator can evaluate many
    parameter derivatives per iteration at O(N) each.
    """

    def __init__(self, ctx: SureContext, h, lam=None, ideal: IdealRegularizer | None = None):
        _check_h(ctx, h)
        self.ctx = ctx
        self.h = h
        self.lam = lam
        self.ideal = ideal
        if ideal is None:
            if lam is None or not (lam > 0) or not np.isfinite(lam):
                raise ParameterDomainError(f"lambda must be > 0, got {lam}")
            self.P = lam * ctx.reg
        else:
            self.P = ctx.sigma2 * ideal.v_spectrum
        self.hh = (h * np.conj(h)).real if np.iscomplexobj(h) else h * h
        denom = self.hh + self.P
        if not np.all(np.isfinite(denom)) or denom.min() <= DENOM_EPS:
            raise DegenerateDataError("Wiener denominator vanishes")
        self.m = 1.0 / denom

    def u_hat(self):
        return np.conj(self.h) * self.m * self.ctx.b_hat

    def residual_norm2(self):
        return float(np.sum((self.P * self.m) ** 2 * self.ctx.b_pow)) / self.ctx.N

    def trace_hmh(self):
        return float(np.sum(self.hh * self.m))

    def value(self):
        c = self.ctx
        return -c.N * c.sigma2 + self.residual_norm2() + 2.0 * c.sigma2 * self.trace_hmh()

    def _q(self, h_g):
        return np.real(np.conj(self.h) * h_g)

    def terms(self, h_g):
        """Fixed-point numerator and denominator for one parameter."""
        _check_h(self.ctx, h_g)
        q = self._q(h_g)
        m2P = self.m**2 * self.P
        num = -self.ctx.sigma2 * float(np.sum(m2P * q))
        den = -float(np.sum(m2P * self.P * self.m * q * self.ctx.b_pow)) / self.ctx.N
        return num, den

    def gradient(self, h_g):
        num, den = self.terms(h_g)
        return 4.0 * (den - num)

    def ratio(self, h_g):
        num, den = self.terms(h_g)
        if abs(den) <= RATIO_EPS:
            raise DegenerateRatioError("fixed-point denominator underflowed")
        return num / den

    def lambda_terms(self):
        """Numerator/denominator of the lambda fixed point (Tikhonov only)."""
        c = self.ctx
        hm2R = self.hh * self.m**2 * c.reg
        num = c.sigma2 * float(np.sum(hm2R))
        den = float(np.sum(hm2R * self.m * c.reg * c.b_pow)) / c.N
        return num, den

    def lambda_gradient(self):
        num, den = self.lambda_terms()
        return 2.0 * (self.lam * den - num)

    def hessian(self, h_r, h_g, h_rg):
        c = self.ctx
        q_r = self._q(h_r)
        q_g = self._q(h_g)
        cross = np.real(np.conj(h_r) * h_g) + self._q(h_rg)
        m, P = self.m, self.P
        tr = float(np.sum(P * m**2 * (-4.0 * m * q_r * q_g + cross)))
        quad = float(np.sum(P**2 * m**3 * c.b_pow * (-6.0 * m * q_r * q_g + cross))) / c.N
        return 4.0 * c.sigma2 * tr - 4.0 * quad


def wiener_solve(ctx, h, lam=None, ideal=None):
    """DFT of the Tikhonov (or ideal Wiener) solution ``u = M H.T b``."""
    return SureEvaluator(ctx, h, lam, ideal).u_hat()


def sure_value(ctx, h, lam=None, ideal=None) -> float:
    return SureEvaluator(ctx, h, lam, ideal).value()


def sure_gamma_gradient(ctx, h, h_gamma, lam=None, ideal=None) -> float:
    """dSURE/dgamma for a PSF parameter with derivative spectrum ``h_gamma``."""
    return SureEvaluator(ctx, h, lam, ideal).gradient(h_gamma)


def gamma_fixed_point_ratio(ctx, h, h_gamma, lam=None, ideal=None) -> float:
    """Ratio ``R`` of the multiplicative update ``gamma <- gamma * R**p``.

    The sign is preserved: ``R <= 0`` means the update is undefined for
    fractional ``p`` and the caller has to fall back to a gradient step.
    """
    return SureEvaluator(ctx, h, lam, ideal).ratio(h_gamma)


def lambda_update(ctx, h, lam) -> float:
    """One step of the lambda fixed point."""
    num, den = SureEvaluator(ctx, h, lam).lambda_terms()
    if not (den > 0) or not np.isfinite(den) or not np.isfinite(num):
        raise DegenerateDataError("lambda update denominator is not positive")
    return num / den


def sure_lambda_gradient(ctx, h, lam) -> float:
    return SureEvaluator(ctx, h, lam).lambda_gradient()


def sure_hessian_entry(ctx, h, h_rho, h_gamma, h_rho_gamma, lam=None, ideal=None) -> float:
    """Second derivative d^2 SURE / (d rho d gamma)."""
    _check_h(ctx, h_rho, h_gamma, h_rho_gamma)
    return SureEvaluator(ctx, h, lam, ideal).hessian(h_rho, h_gamma, h_rho_gamma)


def sure_reg_order_gradient(ctx, h, lam) -> float:
    """dSURE/dr for the finite-difference order ``r`` of ``ctx.reg_spec``."""
    spec = ctx.reg_spec
    ev = SureEvaluator(ctx, h, lam)
    dR = regularizer_order_derivative(spec, ctx.shape)
    m, c = ev.m, ctx
    tr = float(np.sum(m**2 * dR * ev.hh))
    quad = float(np.sum(c.reg * dR * m**3 * ev.hh * c.b_pow)) / c.N
    return -2.0 * lam * c.sigma2 * tr + 2.0 * lam**2 * quad
