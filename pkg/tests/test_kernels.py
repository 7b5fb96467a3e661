import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auctionbook import kernels
from auctionbook.kernels import python_backend as py

cy = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_tridiagonal_against_dense():
    rng = np.random.default_rng(0)
    n = 50
    lower, upper = rng.normal(size=n), rng.normal(size=n)
    diag = 4 + np.abs(lower) + np.abs(upper)
    rhs = rng.normal(size=n)
    A = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    np.testing.assert_allclose(kernels.solve_tridiagonal(lower, diag, upper, rhs), np.linalg.solve(A, rhs),
                               rtol=1e-12)


def test_rescaled_range_enumeration():
    # X = 0, 1, 1: increments 1, 0
    X = np.array([[0.0, 1.0, 1.0]])
    out = kernels.rescaled_range(X)
    assert np.isnan(out[0, 0])  # S_1 = 0
    # t = 2: Y_s = X_s - (s/2) X_2 -> Y_1 = 0.5, Y_2 = 0 ; R = 0.5 ; S^2 = 1/2 - 1/4
    assert out[0, 1] == pytest.approx(0.5 / np.sqrt(0.25))


@needs_compiled
@settings(max_examples=50, deadline=None)
@given(st.integers(3, 200), st.integers(0, 10_000))
def test_tridiagonal_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    lower, upper = rng.normal(size=n), rng.normal(size=n)
    diag = 3 + np.abs(lower) + np.abs(upper)
    rhs = rng.normal(size=n)
    np.testing.assert_allclose(cy.solve_tridiagonal(lower, diag, upper, rhs),
                               py.solve_tridiagonal(lower, diag, upper, rhs), rtol=1e-12, atol=1e-14)


@needs_compiled
@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.integers(0, 10_000),
       st.integers(0, 20), st.integers(0, 20))
def test_clearing_backends_agree(shape, seed, mo_buy, mo_sell):
    rng = np.random.default_rng(seed)
    n = len(shape)
    sell = rng.integers(0, 4, n) * np.array(shape)
    buy = rng.integers(0, 4, n) * np.array(shape[::-1])
    ref = int(rng.integers(0, n))
    assert cy.clearing_scan(sell, buy, mo_buy, mo_sell, ref) == py.clearing_scan(sell, buy, mo_buy, mo_sell, ref)


@needs_compiled
def test_rescaled_range_backends_agree():
    rng = np.random.default_rng(1)
    X = np.cumsum(rng.normal(size=(20, 61)), axis=1)
    np.testing.assert_allclose(cy.rescaled_range(X), py.rescaled_range(X), rtol=1e-12)
