"""Arbitrary-size 2D discrete Fourier transforms.

The forward transform uses the negative-exponent convention and is
unnormalized; the inverse carries the ``1 / (rows * cols)`` factor.

Lengths are factored into small primes and evaluated with a mixed-radix
decimation-in-time recursion. Prime lengths above ``_DIRECT_LIMIT`` go
through Bluestein's chirp-z identity on a power-of-two work buffer, so
every size (including the awkward ``M + N_k - 1`` sizes produced by
full-convolution padding) is handled without rounding up.

All transforms act on the last two axes and broadcast over any leading
batch/channel axes.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DimensionError

__all__ = ["zero_pad", "fft2d", "ifft2d", "dft2d_reference", "fft1d"]

# primes up to this length use an explicit DFT matrix
_DIRECT_LIMIT = 31


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _roots(n: int, sign: int) -> np.ndarray:
    """exp(sign * 2*pi*i * j / n) for j in [0, n)."""
    j = np.arange(n)
    return np.exp(sign * 2j * np.pi * j / n)


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    j = np.arange(n)
    # reduce the exponent mod n before scaling to keep phases exact
    return _roots(n, sign)[np.outer(j, j) % n]


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int, sign: int) -> np.ndarray:
    n = p * m
    return _roots(n, sign)[np.outer(np.arange(p), np.arange(m)) % n]


@lru_cache(maxsize=None)
def _bluestein_plan(n: int, sign: int):
    j = np.arange(n)
    # j^2 mod 2n keeps the chirp phase exact for large j
    chirp = np.exp(sign * 1j * np.pi * ((j * j) % (2 * n)) / n)
    size = 1 << (2 * n - 1).bit_length()
    b = np.zeros(size, dtype=complex)
    b[:n] = np.conj(chirp)
    b[size - n + 1:] = np.conj(chirp[1:])[::-1]
    return chirp, size, _fft_last(b, -1)


def _bluestein(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    chirp, size, b_hat = _bluestein_plan(n, sign)
    work = np.zeros(a.shape[:-1] + (size,), dtype=complex)
    work[..., :n] = a * chirp
    conv = _fft_last(_fft_last(work, -1) * b_hat, 1) / size
    return conv[..., :n] * chirp


def _fft_last(a: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis with exponent sign ``sign``."""
    n = a.shape[-1]
    if n == 1:
        return a.astype(complex, copy=True)
    p = _smallest_factor(n)
    if p == n:
        if n <= _DIRECT_LIMIT:
            return a @ _dft_matrix(n, sign)
        return _bluestein(a, sign)
    m = n // p
    # sub[..., r, k] = a[..., k*p + r]
    sub = np.swapaxes(a.reshape(a.shape[:-1] + (m, p)), -1, -2)
    inner = _fft_last(sub, sign) * _twiddles(p, m, sign)
    # out[..., s, k] = sum_r W_p^{rs} inner[..., r, k]; flat index s*m + k
    out = np.matmul(_dft_matrix(p, sign), inner)
    return out.reshape(a.shape[:-1] + (n,))


def fft1d(a, inverse: bool = False) -> np.ndarray:
    """1D transform along the last axis (inverse is normalized by 1/n)."""
    a = np.asarray(a, dtype=complex)
    if a.shape[-1] < 1:
        raise DimensionError("transform length must be at least 1")
    if inverse:
        return _fft_last(a, 1) / a.shape[-1]
    return _fft_last(a, -1)


def _transform2d(x, sign: int) -> np.ndarray:
    a = np.asarray(x, dtype=complex)
    if a.ndim < 2 or a.shape[-1] < 1 or a.shape[-2] < 1:
        raise DimensionError(f"need a map of at least 1x1, got shape {a.shape}")
    a = _fft_last(a, sign)
    a = np.swapaxes(_fft_last(np.swapaxes(a, -1, -2), sign), -1, -2)
    return np.ascontiguousarray(a)


def fft2d(x) -> np.ndarray:
    """Forward 2D DFT over the last two axes.

    ``X[p, q] = sum_m sum_n exp(-2 pi i (p m / R + q n / C)) x[m, n]``
    """
    return _transform2d(x, -1)


def ifft2d(X) -> np.ndarray:
    """Inverse of :func:`fft2d`, normalized by ``1 / (rows * cols)``."""
    X = np.asarray(X)
    return _transform2d(X, 1) / (X.shape[-1] * X.shape[-2])


def zero_pad(x, target_rows: int, target_cols: int) -> np.ndarray:
    """Place ``x`` in the top-left corner of a zero map of the target size.

    Leading axes are preserved, only the last two are padded.
    """
    x = np.asarray(x)
    rows, cols = x.shape[-2:]
    if target_rows < rows or target_cols < cols:
        raise DimensionError(
            f"cannot pad {rows}x{cols} down to {target_rows}x{target_cols}")
    out = np.zeros(x.shape[:-2] + (target_rows, target_cols), dtype=x.dtype)
    out[..., :rows, :cols] = x
    return out


def dft2d_reference(x) -> np.ndarray:
    """Direct double-sum DFT of a single 2D map. O(R^2 C^2); oracle use only."""
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2:
        raise DimensionError("reference DFT takes a single 2D map")
    R, C = x.shape
    p = np.arange(R)[:, None, None, None]
    q = np.arange(C)[None, :, None, None]
    m = np.arange(R)[None, None, :, None]
    n = np.arange(C)[None, None, None, :]
    phase = ((p * m) % R) / R + ((q * n) % C) / C
    return np.sum(np.exp(-2j * np.pi * phase) * x[None, None], axis=(2, 3))
