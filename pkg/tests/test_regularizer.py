import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_regularizer, dft_matrix, rel
from surepsf.exceptions import ParameterDomainError
from surepsf.regularizer import (
    RegularizerSpec,
    regularizer_order_derivative,
    regularizer_spectrum,
)


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("shape", [(8, 8), (6, 7)])
def test_exact_spectrum_diagonalizes_dense_operator(order, shape):
    m, n = shape
    w = dft_matrix(m, n)
    dense = dense_regularizer(m, n, order)
    diag = w @ dense @ w.conj().T / (m * n)
    spec = regularizer_spectrum(RegularizerSpec(order, normalized=False), shape)
    assert rel(np.diag(diag), spec.ravel()) < 1e-12
    off = diag - np.diag(np.diag(diag))
    assert np.abs(off).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 4.0))
def test_normalized_differs_by_four_to_the_r(r):
    exact = regularizer_spectrum(RegularizerSpec(r, normalized=False), (9, 10))
    norm = regularizer_spectrum(RegularizerSpec(r), (9, 10))
    assert np.allclose(norm * 4.0**r, exact, rtol=1e-12)
    assert norm.max() <= 2.0 + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 3.0), st.booleans())
def test_nonnegative_and_zero_only_at_dc(r, normalized):
    d = regularizer_spectrum(RegularizerSpec(r, normalized), (8, 6))
    assert d[0, 0] == 0.0
    assert np.all(d.ravel()[1:] > 0)


@pytest.mark.parametrize("normalized", [True, False])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.3])
def test_order_derivative_matches_finite_difference(r, normalized):
    shape = (12, 10)
    eps = 1e-6
    hi = regularizer_spectrum(RegularizerSpec(r + eps, normalized), shape)
    lo = regularizer_spectrum(RegularizerSpec(r - eps, normalized), shape)
    got = regularizer_order_derivative(RegularizerSpec(r, normalized), shape)
    assert rel(got, (hi - lo) / (2 * eps)) < 1e-7


def test_order_accepts_plain_number():
    assert np.array_equal(regularizer_spectrum(2.0, (4, 4)), regularizer_spectrum(RegularizerSpec(2.0), (4, 4)))


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_rejects_bad_order(bad):
    with pytest.raises(ParameterDomainError):
        RegularizerSpec(bad)
