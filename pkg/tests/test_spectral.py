import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_dft, naive_dft2
from spectral_dp.spectral import dft1, dft2, idft1, idft2, real_part

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_delta_sequence_is_flat():
    np.testing.assert_allclose(dft1([1, 0, 0, 0]), [0.5, 0.5, 0.5, 0.5], atol=1e-15)


def test_constant_concentrates_at_dc():
    np.testing.assert_allclose(dft1([1, 1, 1, 1]), [2, 0, 0, 0], atol=1e-15)


def test_inverse_of_dc():
    np.testing.assert_allclose(idft1([2, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)


def test_length7_round_trip_and_oracle():
    x = np.random.default_rng(0).standard_normal(7)
    X = dft1(x)
    np.testing.assert_allclose(X, naive_dft(x), atol=1e-12)
    np.testing.assert_allclose(idft1(X), x, atol=1e-12)


def test_hermitian_input_inverts_to_real():
    rng = np.random.default_rng(1)
    for n in (6, 7, 13):
        X = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        X = 0.5 * (X + np.conj(np.roll(X[::-1], 1)))  # X[k] = conj(X[-k])
        out = idft1(X)
        assert np.max(np.abs(out.imag)) < 1e-12
        np.testing.assert_allclose(out, naive_dft(X, inverse=True), atol=1e-12)


def test_2d_delta():
    np.testing.assert_allclose(dft2([[1, 0], [0, 0]]), np.full((2, 2), 0.5), atol=1e-15)


def test_2d_round_trip_and_separability():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((5, 3))
    np.testing.assert_allclose(idft2(dft2(g)), g, atol=1e-10)
    h = rng.standard_normal((4, 6))
    nested = dft1(dft1(h, axis=1), axis=0)
    np.testing.assert_allclose(dft2(h), nested, atol=1e-10)
    np.testing.assert_allclose(dft2(h), naive_dft2(h), atol=1e-10)


def test_real_part():
    np.testing.assert_array_equal(real_part(np.array([1 + 2j, 3 - 4j])), [1.0, 3.0])
    x = np.random.default_rng(3).standard_normal(9)
    np.testing.assert_allclose(real_part(idft1(dft1(x))), x, atol=1e-10)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        dft1([])
    with pytest.raises(ValueError):
        dft2(np.zeros((0, 3)))


def test_batched_1d_matches_rows():
    x = np.random.default_rng(4).standard_normal((3, 5, 8))
    X = dft1(x)
    for idx in np.ndindex(3, 5):
        np.testing.assert_allclose(X[idx], naive_dft(x[idx]), atol=1e-12)


@given(arrays(np.float64, st.integers(1, 64), elements=finite))
def test_unitarity(x):
    nx = np.linalg.norm(x)
    assert abs(np.linalg.norm(dft1(x)) - nx) <= 1e-10 * max(nx, 1.0)


@given(st.integers(1, 64), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_linearity(n, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    np.testing.assert_allclose(dft1(a * x + b * y), a * dft1(x) + b * dft1(y), atol=1e-10)


@given(st.integers(1, 64), st.integers(0, 2**31))
def test_matches_naive_oracle(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    np.testing.assert_allclose(dft1(x), naive_dft(x), atol=1e-9)
    np.testing.assert_allclose(idft1(x), naive_dft(x, inverse=True), atol=1e-9)


@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**31))
def test_2d_round_trip_property(r, c, seed):
    g = np.random.default_rng(seed).standard_normal((r, c))
    np.testing.assert_allclose(idft2(dft2(g)), g, atol=1e-10)


@pytest.mark.parametrize("n", [7, 13, 97, 1009])
def test_prime_lengths_unitary(n):
    x = np.random.default_rng(n).standard_normal(n)
    assert abs(np.linalg.norm(dft1(x)) / np.linalg.norm(x) - 1) < 1e-10
