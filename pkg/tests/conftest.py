"""Shared fixtures and dense-matrix oracles.

The dense helpers build circulant operators entry by entry from a pixel
kernel and the DFT from explicit complex exponentials, so they share no
code path with ``numpy.fft`` or the package.
"""

import math

import numpy as np
import pytest

from surepsf.psf import GaussianPSF
from surepsf.spectral import forward_dft, inverse_dft
from surepsf.sure import SureContext


def dft_matrix(m, n):
    """Unnormalized 2-D DFT acting on row-major ``vec(img)``."""
    fy = np.exp(-2j * np.pi * np.outer(np.arange(m), np.arange(m)) / m)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    return np.kron(fy, fx)


def kernel_from_spectrum(spec):
    """Pixel kernel of a spectrum through the explicit inverse DFT matrix."""
    m, n = spec.shape
    w = dft_matrix(m, n)
    k = (w.conj() @ spec.ravel()) / (m * n)
    return k.real.reshape(m, n), float(np.max(np.abs(k.imag)))


def circulant(kernel):
    """Dense ``A`` with ``(A u)[y, x] = sum k[(y - y') % m, (x - x') % n] u[y', x']``."""
    m, n = kernel.shape
    y, x = np.divmod(np.arange(m * n), n)
    return kernel[(y[:, None] - y[None, :]) % m, (x[:, None] - x[None, :]) % n]


def difference_matrix(n):
    """Periodic forward difference ``(D u)[i] = u[i+1] - u[i]``."""
    return np.roll(np.eye(n), 1, axis=1) - np.eye(n)


def dense_regularizer(m, n, order):
    """``sum_axes (D.T D)^order`` for an integer order, exact scaling."""
    ty = difference_matrix(m)
    tx = difference_matrix(n)
    ay = np.linalg.matrix_power(ty.T @ ty, order)
    ax = np.linalg.matrix_power(tx.T @ tx, order)
    return np.kron(ay, np.eye(n)) + np.kron(np.eye(m), ax)


def rel(a, b):
    """Normwise relative difference, ``|a - b| / max(|b|, tiny)``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def blurred_problem(shape, model, snr=60.0, seed=0, image=None, reg=1.0):
    """Smooth random image blurred by ``model`` plus white noise."""
    rng = np.random.default_rng(seed)
    if image is None:
        # low-pass random field keeps the spectrum realistic
        g = GaussianPSF(1.5, 1.5).spectrum(shape)
        image = inverse_dft(forward_dft(rng.random(shape)) * g) + 0.5
    blurred = inverse_dft(forward_dft(image) * model.spectrum(shape))
    sigma = float(blurred.mean()) / snr
    b = blurred + sigma * rng.standard_normal(shape)
    return SureContext.from_image(b, sigma**2, reg), image, sigma


class Dense:
    """Dense-matrix evaluation of the Tikhonov problem on a small grid."""

    def __init__(self, b, sigma2, model, lam, order=1):
        m, n = b.shape
        self.N = m * n
        k, imag = kernel_from_spectrum(model.spectrum(b.shape))
        assert imag < 1e-12
        self.H = circulant(k)
        # the package default is the exact operator scaled by 4**-r
        self.R = dense_regularizer(m, n, order) / 4.0**order
        self.b = b.ravel()
        self.s2 = sigma2
        self.lam = lam
        self.M = np.linalg.inv(self.H.T @ self.H + lam * self.R)
        self.u = self.M @ self.H.T @ self.b
        self.A = self.H @ self.M @ self.H.T

    def sure(self):
        r = self.H @ self.u - self.b
        return r @ r + 2 * self.s2 * np.trace(self.A) - self.N * self.s2


@pytest.fixture
def reference_model():
    return GaussianPSF(3.0, 1.0, math.radians(25.0))
