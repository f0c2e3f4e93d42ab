"""Unitary discrete Fourier transforms.

Every transform here uses the symmetric ``1/sqrt(N)`` normalisation, so the
L2 norm of a gradient is the same in the signal and spectral domains.  That
property is what lets the mechanisms clip in either domain with one bound.

The heavy lifting is done by :mod:`numpy.fft` (pocketfft), which handles
arbitrary lengths with mixed-radix kernels and Bluestein's algorithm for
large prime factors.  Lengths are never padded to a power of two: the kept
fraction ``K/N`` of a filter is defined on the logical length.
"""

from __future__ import annotations

import numpy as np

__all__ = ["dft1", "idft1", "dft2", "idft2", "real_part"]


def _check_1d(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ValueError(f"{name}: transform length must be >= 1, got shape {x.shape}")
    return x


def _check_2d(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"{name}: grid must have rows, cols >= 1, got shape {x.shape}")
    return x


def dft1(x, axis: int = -1) -> np.ndarray:
    """Forward unitary DFT, ``F_i = N^-1/2 sum_n x_n exp(-2j pi i n / N)``.

    Works along ``axis`` so stacks of vectors (blocks, trials) transform in
    one call.
    """
    x = np.moveaxis(_check_1d(x, "dft1"), axis, -1)
    return np.moveaxis(np.fft.fft(x, norm="ortho"), -1, axis)


def idft1(X, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`dft1`."""
    X = np.moveaxis(_check_1d(X, "idft1"), axis, -1)
    return np.moveaxis(np.fft.ifft(X, norm="ortho"), -1, axis)


def dft2(x) -> np.ndarray:
    """Unitary 2D DFT over the last two axes (rows, cols).

    Separable: equal to :func:`dft1` applied along the rows and then along
    the columns.  Leading axes are treated as a batch.
    """
    x = _check_2d(x, "dft2")
    return np.fft.fft2(x, norm="ortho")


def idft2(X) -> np.ndarray:
    """Inverse of :func:`dft2`."""
    X = _check_2d(X, "idft2")
    return np.fft.ifft2(X, norm="ortho")


def real_part(X) -> np.ndarray:
    """Drop imaginary components (a copy, always float64)."""
    return np.array(np.real(X), dtype=np.float64)
