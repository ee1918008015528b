"""Sparse storage of thresholded spectral feature maps.

A :class:`SparseSpectral` is a coordinate list over an N-d complex array
whose last two axes are the spectral rows and columns. Leading axes, if
any, index batch samples and channels. Entries are kept in lexicographic
coordinate order and only values with non-zero magnitude are stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError

__all__ = [
    "SparseSpectral",
    "threshold_to_sparse",
    "densify",
    "nnz_fraction",
    "check_hermitian",
]


@dataclass(frozen=True, eq=False)
class SparseSpectral:
    """Coordinate-list complex map.

    Attributes
    ----------
    shape : tuple of int
        Full dense shape; ``shape[-2:]`` is ``(rows, cols)``.
    coords : ndarray of int64, shape (ndim, nnz)
        Entry coordinates, sorted lexicographically.
    values : ndarray of complex128, shape (nnz,)
    """

    shape: tuple
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        coords = np.asarray(self.coords, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.complex128)
        if coords.ndim != 2 or coords.shape[0] != len(shape):
            raise StructuralError(
                f"coords must have shape ({len(shape)}, nnz), got {coords.shape}")
        if values.shape != (coords.shape[1],):
            raise StructuralError("one value per coordinate column is required")
        coords.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_entries(cls, rows: int, cols: int, entries) -> "SparseSpectral":
        """Build a 2D map from ``(row, col, value)`` triples."""
        entries = list(entries)
        if entries:
            r, c, v = zip(*entries)
            coords = np.array([r, c], dtype=np.int64)
            values = np.array(v, dtype=complex)
        else:
            coords = np.zeros((2, 0), dtype=np.int64)
            values = np.zeros(0, dtype=complex)
        out = cls((rows, cols), coords, values)
        out.validate()
        return out

    @classmethod
    def empty(cls, shape) -> "SparseSpectral":
        shape = tuple(shape)
        return cls(shape, np.zeros((len(shape), 0), dtype=np.int64),
                   np.zeros(0, dtype=complex))

    @property
    def rows(self) -> int:
        return self.shape[-2]

    @property
    def cols(self) -> int:
        return self.shape[-1]

    @property
    def nnz(self) -> int:
        return self.values.size

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def entries(self):
        """Iterate ``(*index, value)`` tuples in storage order."""
        for k in range(self.nnz):
            yield tuple(int(i) for i in self.coords[:, k]) + (complex(self.values[k]),)

    def flat_index(self) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.coords), self.shape)

    def validate(self) -> None:
        """Raise :class:`StructuralError` unless every invariant holds."""
        shape = np.array(self.shape, dtype=np.int64)[:, None]
        if self.nnz == 0:
            return
        if np.any(self.coords < 0) or np.any(self.coords >= shape):
            raise StructuralError("entry index out of bounds")
        flat = self.flat_index()
        if np.any(np.diff(flat) <= 0):
            raise StructuralError("entries must be strictly increasing in index order")
        if np.any(self.values == 0):
            raise StructuralError("stored values must have non-zero magnitude")
        if not np.all(np.isfinite(self.values)):
            raise StructuralError("stored values must be finite")

    def with_values(self, values) -> "SparseSpectral":
        """Same support, new values (zeros allowed; used for gradients)."""
        return SparseSpectral(self.shape, self.coords, values)

    def gather(self, dense) -> np.ndarray:
        """Read ``dense`` at this map's support."""
        return np.asarray(dense)[tuple(self.coords)]

    def to_dense(self) -> np.ndarray:
        return densify(self)

    def __repr__(self):
        return f"SparseSpectral(shape={self.shape}, nnz={self.nnz})"


def threshold_to_sparse(Y, beta: float) -> SparseSpectral:
    """Keep entries with ``|Y| > beta`` (strict), drop the rest."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    Y = np.asarray(Y, dtype=complex)
    keep = np.abs(Y) > beta
    coords = np.array(np.nonzero(keep), dtype=np.int64).reshape(Y.ndim, -1)
    return SparseSpectral(Y.shape, coords, Y[keep])


def densify(S: SparseSpectral) -> np.ndarray:
    """Scatter the stored entries into a zero-filled complex array."""
    shape = np.array(S.shape, dtype=np.int64)[:, None]
    if S.nnz and (np.any(S.coords < 0) or np.any(S.coords >= shape)):
        raise StructuralError("entry index out of bounds")
    out = np.zeros(S.shape, dtype=complex)
    out[tuple(S.coords)] = S.values
    return out


def nnz_fraction(S: SparseSpectral) -> float:
    """Stored entries divided by the dense entry count."""
    if S.size == 0:
        return 0.0
    return S.nnz / S.size


def mirror(X) -> np.ndarray:
    """``X[..., (-p) mod R, (-q) mod C]`` for every ``(p, q)``."""
    X = np.asarray(X)
    return np.roll(np.flip(X, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))


def check_hermitian(X, tol: float) -> bool:
    """True iff ``|X(-p, -q) - conj(X(p, q))| <= tol`` everywhere.

    Indices are taken modulo the map size; leading axes are checked
    map by map. Accepts dense arrays or :class:`SparseSpectral`.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if isinstance(X, SparseSpectral):
        X = densify(X)
    X = np.asarray(X, dtype=complex)
    return bool(np.all(np.abs(mirror(X) - np.conj(X)) <= tol))
