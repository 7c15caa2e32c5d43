"""Circulant operator algebra in the Fourier domain.

Images are real 2-D arrays of shape ``(m, n)`` (rows = y, columns = x).
A *spectrum* is the complex ``(m, n)`` array of eigenvalues of a circulant
(periodic convolution) operator, stored in the plain FFT layout: entry
``(jy, jx)`` sits at normalized frequency ``(ky, kx) = (wrap(jy)/m, wrap(jx)/n)``
where ``wrap(j) = j`` for ``j < ceil(dim/2)`` and ``j - dim`` otherwise.

The spectrum of an operator is the *unnormalized* DFT of its generating
kernel (equivalently ``sqrt(N)`` times the unitary DFT), so a PSF that sums
to one has spectrum 1 at DC, ``trace(A) = sum(a)`` and the spectrum of
``A.T`` is ``conj(a)``.  Vectors transformed with :func:`forward_dft` obey
``u.T @ v == sum(conj(u_hat) * v_hat) / N``.
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

from .exceptions import DimensionMismatchError, InvalidInputError, SymmetryError

__all__ = [
    "as_image",
    "frequency_grid",
    "forward_dft",
    "inverse_dft",
    "reflect_indices",
    "hermitian_part",
    "symmetry_residual",
    "trace_product",
    "trace_re",
    "quadratic_form",
    "periodic_smooth_split",
]


def as_image(img) -> np.ndarray:
    """Validate and return ``img`` as a float64 ``(m, n)`` array."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"image must be 2-D, got shape {a.shape}")
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise InvalidInputError(f"image must be at least 2x2, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("image contains non-finite samples")
    return a


def _check_shape(shape) -> tuple[int, int]:
    m, n = (int(s) for s in shape)
    if m < 2 or n < 2:
        raise InvalidInputError(f"grid must be at least 2x2, got {(m, n)}")
    return m, n


def frequency_grid(shape) -> tuple[np.ndarray, np.ndarray]:
    """Normalized frequencies ``(kx, ky)`` broadcast to ``shape``.

    Values lie in ``[-1/2, 1/2)``; odd sizes use the same wrap rule.
    """
    m, n = _check_shape(shape)
    ky = np.fft.fftfreq(m)[:, None]
    kx = np.fft.fftfreq(n)[None, :]
    return np.broadcast_to(kx, (m, n)), np.broadcast_to(ky, (m, n))


def forward_dft(img) -> np.ndarray:
    """Unnormalized 2-D DFT of a real image."""
    return np.fft.fft2(as_image(img))


def symmetry_residual(spec) -> float:
    """Max of ``|S(k) - conj(S(-k))|`` relative to ``max(1, max|S|)``."""
    s = np.asarray(spec)
    ref = s[reflect_indices(s.shape)]
    scale = max(1.0, float(np.max(np.abs(s))))
    return float(np.max(np.abs(s - np.conj(ref)))) / scale


def inverse_dft(spec, tol: float = 1e-8) -> np.ndarray:
    """Real image whose :func:`forward_dft` is ``spec``.

    Raises
    ------
    SymmetryError
        If the inverse transform has an imaginary part larger than ``tol``
        relative to the real part.
    """
    s = np.asarray(spec, dtype=np.complex128)
    if s.ndim != 2:
        raise InvalidInputError(f"spectrum must be 2-D, got shape {s.shape}")
    _check_shape(s.shape)
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("spectrum contains non-finite values")
    img = np.fft.ifft2(s)
    scale = max(1.0, float(np.max(np.abs(img.real))))
    residual = float(np.max(np.abs(img.imag))) / scale
    if residual > tol:
        raise SymmetryError(residual, tol)
    return img.real.copy()


def reflect_indices(shape):
    """Index arrays mapping each frequency ``k`` to ``-k`` (mod grid)."""
    m, n = shape
    ry = (-np.arange(m)) % m
    rx = (-np.arange(n)) % n
    return np.ix_(ry, rx)


def hermitian_part(spec) -> np.ndarray:
    """Project ``spec`` onto conjugate-symmetric spectra.

    ``(S(k) + conj(S(-k))) / 2``.  For a spectrum sampled from an even,
    real function this only alters the Nyquist row/column of even-sized
    grids, where ``+1/2`` and ``-1/2`` alias onto one sample.
    """
    s = np.asarray(spec)
    return 0.5 * (s + np.conj(s[reflect_indices(s.shape)]))


def _same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionMismatchError(f"shape {a.shape} does not match {shape}")


def trace_product(a, b) -> complex:
    """``trace(A @ B)`` for circulant ``A``, ``B`` given their spectra."""
    a = np.asarray(a)
    b = np.asarray(b)
    _same_shape(a, b)
    return complex(np.sum(a * b))


def trace_re(a) -> float:
    """Real part of the trace of a circulant operator."""
    return float(np.sum(np.real(a)))


def quadratic_form(u_hat, ops: Sequence, v_hat) -> complex:
    """``u.T @ (A_1 @ ... @ A_k) @ v`` from DFTs and operator spectra.

    ``u_hat`` and ``v_hat`` are :func:`forward_dft` outputs.  The value is
    returned in pixel-domain units (the ``1/N`` Parseval factor of the
    unnormalized DFT is applied here).
    """
    u_hat = np.asarray(u_hat)
    v_hat = np.asarray(v_hat)
    ops = [np.asarray(o) for o in ops]
    _same_shape(u_hat, v_hat, *ops)
    chain = reduce(np.multiply, ops, v_hat)
    return complex(np.sum(np.conj(u_hat) * chain)) / u_hat.size


def periodic_smooth_split(img):
    """Split ``img = p + s`` into a periodic part and a smooth part.

    ``s`` is the solution of a discrete Poisson problem driven only by the
    jumps across opposite image borders, with zero mean.  ``p`` has no
    wrap-around discontinuity, so its DFT is free of the cross-shaped
    leakage a plain FFT of a cropped patch shows.

    Returns
    -------
    p, s : ndarray
    """
    u = as_image(img)
    m, n = u.shape
    v = np.zeros_like(u)
    v[0, :] += u[-1, :] - u[0, :]
    v[-1, :] += u[0, :] - u[-1, :]
    v[:, 0] += u[:, -1] - u[:, 0]
    v[:, -1] += u[:, 0] - u[:, -1]
    cy = np.cos(2 * np.pi * np.arange(m) / m)[:, None]
    cx = np.cos(2 * np.pi * np.arange(n) / n)[None, :]
    den = 2.0 * cy + 2.0 * cx - 4.0
    den[0, 0] = 1.0
    s_hat = np.fft.fft2(v) / den
    s_hat[0, 0] = 0.0
    s = np.fft.ifft2(s_hat).real
    return u - s, s
