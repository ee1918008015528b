"""The spectral convolutional block: convolution, threshold and activation.

Forward for a spatial input ``x`` of size ``M x N`` and an ``N_k x N_k``
kernel bank:

1. zero-pad ``x`` and every kernel to ``(M + N_k - 1, N + N_k - 1)``;
2. transform both, multiply element-wise and sum over input channels;
3. keep entries with ``|Y| > beta`` as a sparse map;
4. apply ``tanh`` separately to the real and imaginary parts.

A spectral (sparse) input skips step 1 for ``x``; the kernel is padded to
the input's size, so the convolution is circular at that size.

Gradients treat every complex scalar as a pair of reals and are packed
as ``dL/da + i dL/db``. Under that convention a linear map ``A`` has the
adjoint ``A^H``, which is why the inverse transforms in the backward pass
are scaled by ``rows * cols``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from .errors import DimensionError, StructuralError
from .fft import fft2d, ifft2d, zero_pad
from .sparse import SparseSpectral, densify, threshold_to_sparse

__all__ = [
    "SpecConvLayer",
    "BlockCache",
    "activate",
    "activate_values",
    "activate_backward",
    "spec_conv_forward",
    "spec_conv_backward",
    "spectral_downsample",
    "spectral_downsample_backward",
]


@dataclass
class SpecConvLayer:
    """Kernel bank ``(out_channels, in_channels, N_k, N_k)`` kept spatially."""

    kernels: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim == 2:
            k = k[None, None]
        if k.ndim != 4 or k.shape[-1] != k.shape[-2] or k.shape[-1] < 1:
            raise DimensionError(f"kernel bank must be (out, in, k, k), got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise ValueError("kernel entries must be finite")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        self.kernels = k

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[-1]


@dataclass
class BlockCache:
    """State saved by :func:`spec_conv_forward` for the backward pass."""

    X: np.ndarray
    K: np.ndarray
    Yhat: SparseSpectral
    input_was_spatial: bool
    input_dims: tuple
    kernel_size: int
    input_support: Optional[SparseSpectral] = None

    @property
    def support(self) -> np.ndarray:
        return self.Yhat.coords


def activate_values(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.tanh(v.real) + 1j * np.tanh(v.imag)


def activate(Yhat: SparseSpectral) -> SparseSpectral:
    """Apply ``tanh(a) + i tanh(b)`` to every stored ``a + ib``."""
    return Yhat.with_values(activate_values(Yhat.values))


def activate_backward(grad, pre) -> np.ndarray:
    """Componentwise ``tanh'`` applied to a packed complex gradient."""
    grad = np.asarray(grad, dtype=complex)
    pre = np.asarray(pre, dtype=complex)
    return (grad.real * (1.0 - np.tanh(pre.real) ** 2)
            + 1j * grad.imag * (1.0 - np.tanh(pre.imag) ** 2))


def _as_batch(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise DimensionError(f"expected a 2D map or a (batch, channel, rows, cols) array, got {x.shape}")


def _as_batch_sparse(S: SparseSpectral) -> SparseSpectral:
    lead = 4 - len(S.shape)
    if lead < 0:
        raise DimensionError(f"sparse input has too many axes: {S.shape}")
    if lead == 0:
        return S
    coords = np.vstack([np.zeros((lead, S.nnz), dtype=np.int64), S.coords])
    return SparseSpectral((1,) * lead + S.shape, coords, S.values)


def spec_conv_forward(x: Union[np.ndarray, SparseSpectral], layer: SpecConvLayer):
    """Run the block on a spatial map or a sparse spectral map.

    Inputs are promoted to ``(batch, in_channels, rows, cols)``; the output
    is a :class:`SparseSpectral` of shape ``(batch, out_channels, R, C)``.

    Returns
    -------
    Z : SparseSpectral
    cache : BlockCache
    """
    k = layer.kernel_size
    if isinstance(x, SparseSpectral):
        xs = _as_batch_sparse(x)
        R, C = xs.shape[-2:]
        if R < k or C < k:
            raise DimensionError(
                f"spectral input {R}x{C} is smaller than the {k}x{k} kernel")
        X = densify(xs)
        spatial, dims, support = False, (R, C), xs
    else:
        xd = _as_batch(np.asarray(x, dtype=np.float64))
        M, N = xd.shape[-2:]
        R, C = M + k - 1, N + k - 1
        X = fft2d(zero_pad(xd, R, C))
        spatial, dims, support = True, (M, N), None
    if X.shape[1] != layer.in_channels:
        raise DimensionError(
            f"input has {X.shape[1]} channels, layer expects {layer.in_channels}")

    K = fft2d(zero_pad(layer.kernels, R, C))
    Y = np.einsum("bipq,oipq->bopq", X, K)
    Yhat = threshold_to_sparse(Y, layer.beta)
    Z = activate(Yhat)
    cache = BlockCache(X=X, K=K, Yhat=Yhat, input_was_spatial=spatial,
                       input_dims=dims, kernel_size=k, input_support=support)
    return Z, cache


def _grad_on_support(grad_Z, Yhat: SparseSpectral) -> np.ndarray:
    if isinstance(grad_Z, SparseSpectral):
        g = _as_batch_sparse(grad_Z)
        if g.shape != Yhat.shape:
            raise StructuralError(f"gradient shape {g.shape} != output shape {Yhat.shape}")
        if g.nnz == Yhat.nnz and np.array_equal(g.coords, Yhat.coords):
            return g.values
        flat_g = g.flat_index()
        flat_s = Yhat.flat_index()
        if not np.all(np.isin(flat_g, flat_s)):
            raise StructuralError("gradient support is not contained in the block support")
        out = np.zeros(Yhat.nnz, dtype=complex)
        out[np.searchsorted(flat_s, flat_g)] = g.values
        return out
    g = np.asarray(grad_Z, dtype=complex)
    if g.ndim < 4:
        g = g.reshape((1,) * (4 - g.ndim) + g.shape)
    if g.shape != Yhat.shape:
        raise StructuralError(f"gradient shape {g.shape} != output shape {Yhat.shape}")
    # off-support entries were dropped by the threshold and get no gradient
    return Yhat.gather(g)


def spec_conv_backward(grad_Z, cache: BlockCache):
    """Approximate gradients of the block.

    Gradient flows only through entries kept by the threshold. ``grad_Z``
    may be sparse (support contained in the block's support) or dense, in
    which case off-support entries are ignored.

    Returns
    -------
    grad_input : ndarray (spatial input) or SparseSpectral (spectral input)
    grad_kernel : ndarray of shape ``(out, in, N_k, N_k)``
    """
    Yhat = cache.Yhat
    g = activate_backward(_grad_on_support(grad_Z, Yhat), Yhat.values)
    R, C = Yhat.shape[-2:]
    G = np.zeros(Yhat.shape, dtype=complex)
    G[tuple(Yhat.coords)] = g

    grad_K = np.einsum("bopq,bipq->oipq", G, np.conj(cache.X))
    grad_X = np.einsum("bopq,oipq->bipq", G, np.conj(cache.K))
    k = cache.kernel_size
    grad_kernel = (R * C) * ifft2d(grad_K).real[..., :k, :k]
    if cache.input_was_spatial:
        M, N = cache.input_dims
        grad_input = (R * C) * ifft2d(grad_X).real[..., :M, :N]
    else:
        grad_input = cache.input_support.with_values(cache.input_support.gather(grad_X))
    return grad_input, grad_kernel


@lru_cache(maxsize=None)
def _truncation_matrix(source: int, target: int) -> np.ndarray:
    """Real ``(target, source)`` map keeping the centred low frequencies."""
    P = np.zeros((target, source))
    for f in range(-(target // 2), (target + 1) // 2):
        if target % 2 == 0 and f == -(target // 2):
            # Nyquist bin: average the two mirror source bins
            P[f % target, f % source] += 0.5
            P[f % target, (-f) % source] += 0.5
        else:
            P[f % target, f % source] += 1.0
    P.flags.writeable = False
    return P


def _pool_operators(shape, target_rows: int, target_cols: int):
    rows, cols = shape[-2:]
    if not (1 <= target_rows <= rows and 1 <= target_cols <= cols):
        raise DimensionError(
            f"cannot downsample {rows}x{cols} to {target_rows}x{target_cols}")
    scale = (target_rows * target_cols) / (rows * cols)
    return (_truncation_matrix(rows, target_rows),
            _truncation_matrix(cols, target_cols), scale)


def spectral_downsample(X, target_rows: int, target_cols: int) -> np.ndarray:
    """Spectral pooling by low-frequency truncation.

    Keeps the centred block of the shifted spectrum and rescales so the
    spatial mean is preserved. For even targets the Nyquist row/column is
    the average of its two mirror source bins, which keeps Hermitian
    inputs Hermitian.
    """
    X = np.asarray(X, dtype=complex)
    Pr, Pc, scale = _pool_operators(X.shape, target_rows, target_cols)
    return scale * (Pr @ X @ Pc.T)


def spectral_downsample_backward(grad, source_rows: int, source_cols: int) -> np.ndarray:
    """Adjoint of :func:`spectral_downsample` for packed complex gradients."""
    grad = np.asarray(grad, dtype=complex)
    shape = grad.shape[:-2] + (source_rows, source_cols)
    Pr, Pc, scale = _pool_operators(shape, *grad.shape[-2:])
    return scale * (Pr.T @ grad @ Pc)
