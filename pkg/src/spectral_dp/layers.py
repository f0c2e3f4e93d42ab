"""Forward and backward passes for the layer kinds used by the trainer.

All functions are batch-aware: a leading batch axis is optional and
arbitrary leading axes are carried through where it is cheap to do so.

Spectral weight gradients are returned as the unitary DFT of the exact
signal-domain gradient.  Both the convolution and the circulant product are
cross-correlations (the circulant block's rows are right-rotations of its
defining vector), so the spectral form conjugates the upstream gradient:

    dft(grad) = sqrt(M) * conj(dft(dJ/dA)) * dft(X)

with ``M`` the number of points in the transform grid.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .spectral import dft1, dft2, idft1, idft2, real_part

# --------------------------------------------------------------------------
# 2D convolution (stride 1, zero padding, no bias)
# --------------------------------------------------------------------------


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width)


def _check_conv(X: np.ndarray, W: np.ndarray, padding: int) -> None:
    if W.ndim != 4 or W.shape[2] != W.shape[3]:
        raise ValueError(f"filters must be C_out x C_in x d x d, got {W.shape}")
    if X.ndim not in (3, 4):
        raise ValueError(f"input must be (C, H, W) or (B, C, H, W), got {X.shape}")
    if X.shape[-3] != W.shape[1]:
        raise ValueError(f"input has {X.shape[-3]} channels, filters expect {W.shape[1]}")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    d = W.shape[-1]
    if X.shape[-2] + 2 * padding < d or X.shape[-1] + 2 * padding < d:
        raise ValueError("kernel larger than padded input")


def conv2d_forward(X, W, padding: int = 0) -> np.ndarray:
    """Zero-padded cross-correlation summed over input channels.

    ``X`` is ``(C_in, H, W)`` or ``(B, C_in, H, W)``; ``W`` is
    ``(C_out, C_in, d, d)``.  With ``padding = d // 2`` and odd ``d`` the
    output keeps the input's spatial size.
    """
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    _check_conv(X, W, padding)
    single = X.ndim == 3
    if single:
        X = X[None]
    d = W.shape[-1]
    win = sliding_window_view(_pad_hw(X, padding), (d, d), axis=(-2, -1))
    # win: (B, C_in, H_out, W_out, d, d)
    out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # (B, H_out, W_out, C_out)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return out[0] if single else out


def conv2d_input_grad(dJdA, W, padding: int = 0, input_hw=None) -> np.ndarray:
    """Gradient of the loss with respect to the (unpadded) conv input."""
    dJdA = np.asarray(dJdA, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if dJdA.ndim not in (3, 4) or dJdA.shape[-3] != W.shape[0]:
        raise ValueError(f"upstream gradient {dJdA.shape} does not match filters {W.shape}")
    single = dJdA.ndim == 3
    if single:
        dJdA = dJdA[None]
    d = W.shape[-1]
    full = _pad_hw(dJdA, d - 1)
    win = sliding_window_view(full, (d, d), axis=(-2, -1))  # (B, C_out, Hp, Wp, d, d)
    Wf = W[:, :, ::-1, ::-1]
    dXp = np.tensordot(win, Wf, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    hp, wp = dXp.shape[-2:]
    if input_hw is None:
        input_hw = (hp - 2 * padding, wp - 2 * padding)
    h, w = input_hw
    if h + 2 * padding != hp or w + 2 * padding != wp:
        raise ValueError(f"input size {input_hw} inconsistent with gradient and padding")
    dX = np.ascontiguousarray(dXp[..., padding : padding + h, padding : padding + w])
    return dX[0] if single else dX


def conv2d_weight_grad(dJdA, X, kernel: int, padding: int = 0) -> np.ndarray:
    """Signal-domain weight gradient, computed directly in space.

    Batched inputs give per-sample gradients ``(B, C_out, C_in, d, d)``.
    """
    dJdA = np.asarray(dJdA, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 3
    if single:
        X, dJdA = X[None], dJdA[None]
    win = sliding_window_view(_pad_hw(X, padding), (kernel, kernel), axis=(-2, -1))
    if win.shape[2:4] != dJdA.shape[2:4]:
        raise ValueError(f"upstream gradient {dJdA.shape} does not match conv geometry")
    g = np.einsum("bihw,bchwuv->bicuv", dJdA, win, optimize=True)
    return g[0] if single else g


def conv_grid_shape(input_hw, padding: int):
    """Side lengths of the common FFT grid: the zero-padded input size."""
    h, w = input_hw
    return h + 2 * padding, w + 2 * padding


def pad_to_grid(a: np.ndarray, grid) -> np.ndarray:
    """Zero-pad the last two axes at the bottom/right up to ``grid``."""
    r, c = a.shape[-2:]
    gr, gc = grid
    if r > gr or c > gc:
        raise ValueError(f"array {a.shape[-2:]} larger than grid {grid}")
    width = [(0, 0)] * (a.ndim - 2) + [(0, gr - r), (0, gc - c)]
    return np.pad(a, width)


def conv2d_spectral_weight_grad(dJdA, Xj) -> np.ndarray:
    """Spectral gradient of one filter ``W_ij`` on a common grid.

    ``dJdA`` (the upstream gradient of output channel i, zero-padded at the
    bottom/right) and ``Xj`` (input channel j with the layer's zero padding)
    must share the same grid shape.  The result is ``dft2`` of the circular
    cross-correlation of the two; its top-left ``d x d`` block, after
    :func:`kernel_from_spectral`, is the exact weight gradient.
    """
    dJdA = np.asarray(dJdA, dtype=np.float64)
    Xj = np.asarray(Xj, dtype=np.float64)
    if dJdA.shape[-2:] != Xj.shape[-2:]:
        raise ValueError(f"grids differ: {dJdA.shape[-2:]} vs {Xj.shape[-2:]}")
    m = dJdA.shape[-1] * dJdA.shape[-2]
    return np.sqrt(m) * np.conj(dft2(dJdA)) * dft2(Xj)


def conv2d_spectral_weight_grads(dJdA, X, padding: int) -> np.ndarray:
    """All spectral filter gradients of a layer.

    ``dJdA`` is ``([B,] C_out, H_out, W_out)``, ``X`` the unpadded input
    ``([B,] C_in, H, W)``.  Returns ``([B,] C_out, C_in, Hp, Wp)``.
    """
    dJdA = np.asarray(dJdA, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    Xp = _pad_hw(X, padding)
    grid = Xp.shape[-2:]
    m = grid[0] * grid[1]
    dA_hat = np.conj(dft2(pad_to_grid(dJdA, grid)))
    X_hat = dft2(Xp)
    return np.sqrt(m) * dA_hat[..., :, None, :, :] * X_hat[..., None, :, :, :]


def conv2d_forward_fft(X, W, padding: int = 0) -> np.ndarray:
    """Same result as :func:`conv2d_forward`, computed on the padded-input FFT grid."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    _check_conv(X, W, padding)
    Xp = _pad_hw(X, padding)
    grid = Xp.shape[-2:]
    m = grid[0] * grid[1]
    d = W.shape[-1]
    x_hat = dft2(Xp)  # ([B,] C_in, Hp, Wp)
    w_hat = np.conj(dft2(pad_to_grid(W, grid)))  # (C_out, C_in, Hp, Wp)
    a_hat = np.sqrt(m) * np.einsum("oiyx,...iyx->...oyx", w_hat, x_hat)
    out = real_part(idft2(a_hat))
    return out[..., : grid[0] - d + 1, : grid[1] - d + 1]


def kernel_from_spectral(G, kernel: int) -> np.ndarray:
    """Invert a spectral filter gradient and crop the ``d x d`` kernel support."""
    return real_part(idft2(G))[..., :kernel, :kernel]


def spectral_grad_norm_sq_conv(dJdA, X, padding: int) -> np.ndarray:
    """Per-sample squared norm of the conv spectral gradient, without materialising it.

    ``||G||^2 = M * sum_k (sum_i |dA_hat_ik|^2) (sum_j |X_hat_jk|^2)``.
    """
    Xp = _pad_hw(np.asarray(X, dtype=np.float64), padding)
    grid = Xp.shape[-2:]
    m = grid[0] * grid[1]
    a = np.sum(np.abs(dft2(pad_to_grid(np.asarray(dJdA, dtype=np.float64), grid))) ** 2, axis=-3)
    b = np.sum(np.abs(dft2(Xp)) ** 2, axis=-3)
    return m * np.sum(a * b, axis=(-2, -1))


# --------------------------------------------------------------------------
# circulant and block-circulant products
# --------------------------------------------------------------------------


def circulant_matrix(w) -> np.ndarray:
    """Dense circulant matrix whose first row is ``w`` and whose later rows
    are successive right-rotations."""
    w = np.asarray(w, dtype=np.float64)
    d = w.shape[0]
    idx = (np.arange(d)[None, :] - np.arange(d)[:, None]) % d
    return w[idx]


def circulant_multiply(w, x) -> np.ndarray:
    """``circulant_matrix(w) @ x`` via the DFT.

    >>> circulant_multiply([0.0, 1.0, 0.0], [1.0, 2.0, 3.0]).round(12)
    array([2., 3., 1.])
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape[-1] != x.shape[-1]:
        raise ValueError(f"length mismatch: {w.shape[-1]} vs {x.shape[-1]}")
    d = w.shape[-1]
    return real_part(idft1(np.sqrt(d) * np.conj(dft1(w)) * dft1(x)))


def _check_blocks(w: np.ndarray, n: int) -> None:
    if w.ndim != 3:
        raise ValueError(f"block weights must be p x q x d, got {w.shape}")
    p, q, d = w.shape
    if q * d != n:
        raise ValueError(f"input length {n} != q*d = {q}*{d}")


def _freq_major(a: np.ndarray) -> np.ndarray:
    """``(..., m, n, d)`` -> contiguous ``(d, m, n)`` so BLAS sees plain matrices."""
    return np.ascontiguousarray(np.moveaxis(a, -1, 0))


def block_fc_forward_hat(x_hat: np.ndarray, w_hat: np.ndarray) -> np.ndarray:
    """Spectral block product: ``A_hat[b,i,k] = sqrt(d) sum_j conj(w_hat[i,j,k]) x_hat[b,j,k]``.

    ``x_hat`` is ``(B, q, d)``, ``w_hat`` is ``(p, q, d)``; returns ``(B, p, d)``.
    """
    d = w_hat.shape[-1]
    # one (B, q) @ (q, p) product per frequency
    out = np.matmul(_freq_major(x_hat), _freq_major(np.conj(w_hat)).transpose(0, 2, 1))
    return np.sqrt(d) * out.transpose(1, 2, 0)


def block_fc_input_grad_hat(dA_hat: np.ndarray, w_hat: np.ndarray) -> np.ndarray:
    """``dX_hat[b,j,k] = sqrt(d) sum_i w_hat[i,j,k] dA_hat[b,i,k]``."""
    d = w_hat.shape[-1]
    out = np.matmul(_freq_major(dA_hat), _freq_major(w_hat))
    return np.sqrt(d) * out.transpose(1, 2, 0)


def block_fc_forward(X, w) -> np.ndarray:
    """Block-circulant layer ``A = W X`` from the ``p x q`` defining vectors.

    ``X`` has length ``n = q*d`` (optionally with a leading batch axis);
    output segment ``i`` is ``sum_j circulant_multiply(w[i, j], X_j)``.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_blocks(w, X.shape[-1])
    p, q, d = w.shape
    single = X.ndim == 1
    xb = X.reshape(-1, q, d)
    A_hat = block_fc_forward_hat(dft1(xb), dft1(w))
    out = real_part(idft1(A_hat)).reshape(-1, p * d)
    return out[0] if single else out


def block_fc_input_grad(dJdA, w) -> np.ndarray:
    """Gradient with respect to the layer input (transpose-structured product)."""
    dJdA = np.asarray(dJdA, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    p, q, d = w.shape
    if dJdA.shape[-1] != p * d:
        raise ValueError(f"upstream gradient length {dJdA.shape[-1]} != p*d = {p * d}")
    single = dJdA.ndim == 1
    dA_hat = dft1(dJdA.reshape(-1, p, d))
    out = real_part(idft1(block_fc_input_grad_hat(dA_hat, dft1(w)))).reshape(-1, q * d)
    return out[0] if single else out


def block_fc_spectral_weight_grad(dJdA_i, Xj) -> np.ndarray:
    """Spectral gradient of one defining vector ``w_ij``.

    Real part of ``idft1`` of the result is ``dJ/dw_ij``.
    """
    dJdA_i = np.asarray(dJdA_i, dtype=np.float64)
    Xj = np.asarray(Xj, dtype=np.float64)
    if dJdA_i.shape[-1] != Xj.shape[-1]:
        raise ValueError(f"length mismatch: {dJdA_i.shape[-1]} vs {Xj.shape[-1]}")
    d = Xj.shape[-1]
    return np.sqrt(d) * np.conj(dft1(dJdA_i)) * dft1(Xj)


def block_fc_spectral_weight_grads(dJdA, X, block: int) -> np.ndarray:
    """All block spectral gradients: ``([B,] p, q, d)`` complex."""
    dJdA = np.asarray(dJdA, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    lead = X.shape[:-1]
    dA = dJdA.reshape(lead + (-1, block))
    x = X.reshape(lead + (-1, block))
    return np.sqrt(block) * np.conj(dft1(dA))[..., :, None, :] * dft1(x)[..., None, :, :]


# --------------------------------------------------------------------------
# dense, activations, pooling, loss
# --------------------------------------------------------------------------


def dense_forward(x, W, b=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = x @ np.asarray(W).T
    if b is not None:
        out = out + b
    return out


def dense_backward(dJdA, x, W):
    """Returns ``(dW, db, dx)``; batched inputs give per-sample ``dW, db``."""
    dJdA = np.asarray(dJdA, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    dW = dJdA[..., :, None] * x[..., None, :]
    return dW, dJdA.copy(), dJdA @ np.asarray(W)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def tanh_forward(x):
    return np.tanh(x)


def tanh_backward(dout, y):
    """Uses the cached *output* ``y = tanh(x)``."""
    return dout * (1.0 - y * y)


def maxpool2x2_forward(x):
    """2x2 max pooling with stride 2 over the last two axes.

    Odd trailing rows/cols are dropped.  Returns ``(out, argmax)`` where
    ``argmax`` indexes the window in row-major order; ties resolve to the
    first maximum.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    xc = x[..., : 2 * h, : 2 * w]
    win = xc.reshape(x.shape[:-2] + (h, 2, w, 2)).swapaxes(-3, -2)
    win = win.reshape(x.shape[:-2] + (h, w, 4))
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2x2_backward(dout, arg, input_shape):
    dout = np.asarray(dout, dtype=np.float64)
    h, w = arg.shape[-2:]
    win = np.zeros(arg.shape + (4,))
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
    win = win.reshape(arg.shape[:-2] + (h, w, 2, 2)).swapaxes(-3, -2)
    dx = np.zeros(input_shape)
    dx[..., : 2 * h, : 2 * w] = win.reshape(arg.shape[:-2] + (2 * h, 2 * w))
    return dx


def softmax_cross_entropy(logits, label):
    """Cross-entropy of softmax(logits) against integer ``label``.

    Batched when ``logits`` is 2D (then ``label`` is a vector): returns the
    per-sample losses and gradients.
    """
    z = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label)
    z = z - np.max(z, axis=-1, keepdims=True)
    logsum = np.log(np.sum(np.exp(z), axis=-1))
    picked = np.take_along_axis(z, label[..., None].astype(np.intp), axis=-1)[..., 0]
    loss = logsum - picked
    p = np.exp(z - logsum[..., None])
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, label[..., None].astype(np.intp), 1.0, axis=-1)
    dlogits = p - onehot
    if z.ndim == 1:
        return float(loss), dlogits
    return loss, dlogits
