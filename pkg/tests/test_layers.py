import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_diff, dense_block_circulant, dense_circulant, naive_conv2d, rel_err
from spectral_dp import layers as L
from spectral_dp.mechanism import filter1
from spectral_dp.spectral import idft1


def rng(seed=0):
    return np.random.default_rng(seed)


# --- convolution ----------------------------------------------------------


def test_identity_kernel():
    X = rng().standard_normal((2, 5, 5))
    W = np.zeros((2, 2, 1, 1))
    W[0, 0, 0, 0] = W[1, 1, 0, 0] = 1.0
    np.testing.assert_array_equal(L.conv2d_forward(X, W, 0), X)
    np.testing.assert_array_equal(L.conv2d_input_grad(X, W, 0, (5, 5)), X)


def test_zero_kernel():
    X = rng().standard_normal((3, 6, 6))
    W = np.zeros((2, 3, 3, 3))
    assert not np.any(L.conv2d_forward(X, W, 1))
    assert not np.any(L.conv2d_input_grad(np.ones((2, 6, 6)), W, 1, (6, 6)))


def test_conv_matches_nested_loops():
    g = rng(1)
    X = g.standard_normal((1, 4, 4))
    W = g.standard_normal((1, 1, 3, 3))
    np.testing.assert_allclose(L.conv2d_forward(X, W, 1)[0], naive_conv2d(X[0], W[0, 0], 1), atol=1e-10)


@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3, 5]), st.integers(3, 9), st.integers(0, 2**31))
def test_conv_multi_channel_oracle(cin, cout, d, hw, seed):
    g = rng(seed)
    X = g.standard_normal((cin, hw, hw))
    W = g.standard_normal((cout, cin, d, d))
    pad = d // 2
    want = np.array([sum(naive_conv2d(X[j], W[i, j], pad) for j in range(cin)) for i in range(cout)])
    np.testing.assert_allclose(L.conv2d_forward(X, W, pad), want, atol=1e-10)
    np.testing.assert_allclose(L.conv2d_forward_fft(X, W, pad), want, atol=1e-10)


def test_scalar_kernel_spectral_grad():
    g = rng(2)
    dA, X = g.standard_normal((2, 2)), g.standard_normal((2, 2))
    G = L.conv2d_spectral_weight_grad(dA, X)
    assert L.kernel_from_spectral(G, 1)[0, 0] == pytest.approx(np.sum(dA * X))
    assert not np.any(L.conv2d_spectral_weight_grad(np.zeros((2, 2)), X))


def test_spectral_grad_grid_mismatch():
    with pytest.raises(ValueError):
        L.conv2d_spectral_weight_grad(np.zeros((3, 3)), np.zeros((4, 4)))


def _conv_loss(X, W, pad, target):
    return lambda: 0.5 * np.sum((L.conv2d_forward(X, W, pad) - target) ** 2)


def test_conv_spectral_weight_grad_finite_differences():
    g = rng(3)
    X = g.standard_normal((2, 8, 8))
    W = g.standard_normal((3, 2, 3, 3))
    target = g.standard_normal((3, 8, 8))
    dA = L.conv2d_forward(X, W, 1) - target
    G = L.conv2d_spectral_weight_grads(dA, X, 1)
    assert G.shape == (3, 2, 10, 10)
    grad = L.kernel_from_spectral(G, 3)
    fd = central_diff(_conv_loss(X, W, 1, target), W)
    assert rel_err(grad, fd) <= 1e-4


def test_conv_input_grad_finite_differences():
    g = rng(4)
    X = g.standard_normal((2, 7, 7))
    W = g.standard_normal((2, 2, 3, 3))
    target = g.standard_normal((2, 7, 7))
    dA = L.conv2d_forward(X, W, 1) - target
    fd = central_diff(_conv_loss(X, W, 1, target), X)
    assert rel_err(L.conv2d_input_grad(dA, W, 1, (7, 7)), fd) <= 1e-4


@given(st.integers(0, 2**31), st.sampled_from([(3, 1), (5, 2), (3, 0), (2, 1)]))
def test_conv_spectral_equals_direct(seed, kp):
    d, pad = kp
    g = rng(seed)
    X = g.standard_normal((2, 2, 8, 8))
    W = g.standard_normal((3, 2, d, d))
    dA = g.standard_normal(L.conv2d_forward(X, W, pad).shape)
    direct = L.conv2d_weight_grad(dA, X, d, pad)
    spectral = L.kernel_from_spectral(L.conv2d_spectral_weight_grads(dA, X, pad), d)
    np.testing.assert_allclose(spectral, direct, atol=1e-8)


def test_conv_spectral_norm_shortcut():
    g = rng(5)
    X = g.standard_normal((4, 2, 6, 6))
    dA = g.standard_normal((4, 3, 6, 6))
    G = L.conv2d_spectral_weight_grads(dA, X, 1)
    want = np.sum(np.abs(G.reshape(4, -1)) ** 2, axis=1)
    np.testing.assert_allclose(L.spectral_grad_norm_sq_conv(dA, X, 1), want, rtol=1e-10)


def test_conv_grid_is_padded_input():
    assert L.conv_grid_shape((8, 8), 1) == (10, 10)


# --- circulant ------------------------------------------------------------


def test_circulant_identity_and_rotation():
    x = rng().standard_normal(3)
    np.testing.assert_allclose(L.circulant_multiply([1, 0, 0], x), x, atol=1e-15)
    np.testing.assert_allclose(L.circulant_multiply([0, 1, 0], [1, 2, 3]), [2, 3, 1], atol=1e-12)
    np.testing.assert_allclose(dense_circulant([0, 1, 0]) @ [1, 2, 3], [2, 3, 1])


@given(st.integers(1, 32), st.integers(0, 2**31))
def test_circulant_matches_dense(d, seed):
    g = rng(seed)
    w, x = g.standard_normal(d), g.standard_normal(d)
    np.testing.assert_allclose(L.circulant_multiply(w, x), dense_circulant(w) @ x, atol=1e-10)
    np.testing.assert_allclose(L.circulant_matrix(w), dense_circulant(w))


def test_block_fc_trivial_cases():
    x = rng().standard_normal(4)
    w = np.zeros((1, 1, 4))
    w[0, 0, 0] = 1
    np.testing.assert_allclose(L.block_fc_forward(x, w), x, atol=1e-15)
    np.testing.assert_allclose(L.block_fc_input_grad(x, w), x, atol=1e-15)
    assert not np.any(L.block_fc_forward(x, np.zeros((2, 1, 4))))
    assert not np.any(L.block_fc_input_grad(np.ones(8), np.zeros((2, 1, 4))))


def test_block_fc_693():
    g = rng(6)
    w = g.standard_normal((2, 3, 3))
    x = g.standard_normal(9)
    np.testing.assert_allclose(L.block_fc_forward(x, w), dense_block_circulant(w) @ x, atol=1e-10)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 16), st.integers(0, 2**31))
def test_block_fc_matches_dense(p, q, d, seed):
    g = rng(seed)
    w = g.standard_normal((p, q, d))
    X = g.standard_normal((3, q * d))
    M = dense_block_circulant(w)
    np.testing.assert_allclose(L.block_fc_forward(X, w), X @ M.T, atol=1e-10)
    dA = g.standard_normal((3, p * d))
    np.testing.assert_allclose(L.block_fc_input_grad(dA, w), dA @ M, atol=1e-10)


def test_block_fc_shape_errors():
    with pytest.raises(ValueError):
        L.block_fc_forward(np.ones(7), np.ones((1, 2, 4)))


def test_block_spectral_grad_scalar_block():
    G = L.block_fc_spectral_weight_grad(np.array([3.0]), np.array([2.0]))
    assert np.real(idft1(G))[0] == pytest.approx(6.0)
    assert not np.any(L.block_fc_spectral_weight_grad(np.zeros(4), np.ones(4)))


def test_block_spectral_grad_finite_differences():
    g = rng(7)
    w = g.standard_normal((2, 3, 4))
    x = g.standard_normal(12)
    t = g.standard_normal(8)
    f = lambda: 0.5 * np.sum((L.block_fc_forward(x, w) - t) ** 2)  # noqa: E731
    dA = L.block_fc_forward(x, w) - t
    G = L.block_fc_spectral_weight_grads(dA, x, 4)
    grad = np.real(idft1(G))
    assert rel_err(grad, central_diff(f, w)) <= 1e-4
    assert rel_err(L.block_fc_input_grad(dA, w), central_diff(f, x)) <= 1e-4
    # unfiltered spectral gradient carries exactly the signal gradient's energy
    assert np.linalg.norm(G) == pytest.approx(np.linalg.norm(grad), rel=1e-12)


def test_block_spectral_grad_filter_commutes_with_inverse():
    g = rng(8)
    G = L.block_fc_spectral_weight_grads(g.standard_normal(8), g.standard_normal(8), 4)
    kept = np.real(idft1(filter1(G, 2)))
    np.testing.assert_allclose(kept, np.real(idft1(G * np.array([1, 1, 0, 0]))))


# --- dense, activations, pooling, loss -------------------------------------


def test_dense_backward_finite_differences():
    g = rng(9)
    x = g.standard_normal((3, 5))
    W = g.standard_normal((4, 5))
    b = g.standard_normal(4)
    t = g.standard_normal((3, 4))
    f = lambda: 0.5 * np.sum((L.dense_forward(x, W, b) - t) ** 2)  # noqa: E731
    dW, db, dx = L.dense_backward(L.dense_forward(x, W, b) - t, x, W)
    assert dW.shape == (3, 4, 5)  # per sample
    assert rel_err(dW.sum(0), central_diff(f, W)) <= 1e-4
    assert rel_err(db.sum(0), central_diff(f, b)) <= 1e-4
    assert rel_err(dx, central_diff(f, x)) <= 1e-4


def test_tanh_and_relu():
    assert L.tanh_backward(np.array([1.0]), L.tanh_forward(np.array([0.0])))[0] == 1.0
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(L.relu_forward(x), [0, 0, 2])
    np.testing.assert_array_equal(L.relu_backward(np.ones(3), x), [0, 0, 1])


def test_maxpool_first_max_wins():
    x = np.array([[[[1.0, 3.0], [3.0, 0.0]]]])
    out, arg = L.maxpool2x2_forward(x)
    assert out[0, 0, 0, 0] == 3.0
    back = L.maxpool2x2_backward(np.ones_like(out), arg, x.shape)
    np.testing.assert_array_equal(back[0, 0], [[0, 1], [0, 0]])


def test_maxpool_backward_finite_differences():
    g = rng(10)
    x = g.standard_normal((2, 3, 6, 6))
    w = g.standard_normal((2, 3, 3, 3))
    f = lambda: np.sum(L.maxpool2x2_forward(x)[0] * w)  # noqa: E731
    out, arg = L.maxpool2x2_forward(x)
    assert rel_err(L.maxpool2x2_backward(w, arg, x.shape), central_diff(f, x)) <= 1e-4


def test_softmax_uniform_logits():
    loss, d = L.softmax_cross_entropy(np.zeros(10), 3)
    assert loss == pytest.approx(math.log(10))
    assert d[3] == pytest.approx(0.1 - 1)


def test_softmax_gradient_and_stability():
    g = rng(11)
    z = g.standard_normal((4, 5))
    y = np.array([0, 4, 2, 2])
    loss, d = L.softmax_cross_entropy(z, y)
    f = lambda: float(np.sum(L.softmax_cross_entropy(z, y)[0]))  # noqa: E731
    assert rel_err(d, central_diff(f, z)) <= 1e-6
    big, _ = L.softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
    assert np.isfinite(big) and big == pytest.approx(0.0, abs=1e-12)
