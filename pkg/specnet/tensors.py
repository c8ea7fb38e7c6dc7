"""
SpecNet - Tensor Core
Dense real/complex maps, the sparse spectral representation and beta thresholding
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import DimensionError, StructuralError, UsageError


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DenseReal:
    """Dense real-valued 2D map (images, spatial feature maps, kernels)"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError(f"DenseReal needs a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise StructuralError("DenseReal entries must be finite")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SpectralMap:
    """Dense complex-valued 2D map of size (M', N')"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError(f"SpectralMap needs a non-empty 2D array, got shape {data.shape}")
        if not (np.all(np.isfinite(data.real)) and np.all(np.isfinite(data.imag))):
            raise StructuralError("SpectralMap components must be finite")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SparseSpectralMap:
    """
    Coordinate-list storage of the non-zero spectral entries.
    Entries are kept as three parallel arrays sorted by (row, col).
    """
    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError(f"Sparse map dims must be positive, got {self.rows}x{self.cols}")
        row_idx = np.asarray(self.row_idx, dtype=np.int64).reshape(-1)
        col_idx = np.asarray(self.col_idx, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if not (len(row_idx) == len(col_idx) == len(values)):
            raise StructuralError("Sparse map index and value arrays differ in length")
        if len(values):
            if row_idx.min() < 0 or col_idx.min() < 0 or row_idx.max() >= self.rows or col_idx.max() >= self.cols:
                raise StructuralError(f"Sparse map index outside {self.rows}x{self.cols}")
            flat = row_idx * self.cols + col_idx
            if np.any(np.diff(flat) <= 0):
                raise StructuralError("Sparse map indices must be strictly increasing in (row, col)")
            if np.any(np.abs(values) == 0):
                raise StructuralError("Sparse map stores an exact zero")
        object.__setattr__(self, "row_idx", _frozen(row_idx))
        object.__setattr__(self, "col_idx", _frozen(col_idx))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_entries(cls, rows: int, cols: int, entries: List[Tuple[int, int, complex]]) -> "SparseSpectralMap":
        """Build from (row, col, value) triples"""
        if not entries:
            return cls.empty(rows, cols)
        r, c, v = zip(*entries)
        return cls(rows, cols, np.array(r), np.array(c), np.array(v, dtype=np.complex128))

    @classmethod
    def empty(cls, rows: int, cols: int) -> "SparseSpectralMap":
        return cls(rows, cols, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.complex128))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def entries(self) -> List[Tuple[int, int, complex]]:
        return [(int(r), int(c), complex(v)) for r, c, v in zip(self.row_idx, self.col_idx, self.values)]

    def support_mask(self) -> np.ndarray:
        """Boolean (rows, cols) mask of stored indices"""
        mask = np.zeros((self.rows, self.cols), dtype=bool)
        mask[self.row_idx, self.col_idx] = True
        return mask

    def with_values(self, values: np.ndarray) -> "SparseSpectralMap":
        """Same indices, new values (values must stay non-zero)"""
        return SparseSpectralMap(self.rows, self.cols, self.row_idx, self.col_idx, values)

    def to_array(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.complex128)
        out[self.row_idx, self.col_idx] = self.values
        return out


@dataclass(frozen=True)
class Beta:
    """Non-negative magnitude threshold"""
    value: float = 0.0

    def __post_init__(self):
        value = float(self.value)
        if not np.isfinite(value) or value < 0:
            raise UsageError(f"beta must be a finite value >= 0, got {self.value}")
        object.__setattr__(self, "value", value)


def sparse_from_array(array: np.ndarray, mask: Optional[np.ndarray] = None) -> SparseSpectralMap:
    """Keep the non-zero entries of a complex array, optionally only inside mask"""
    array = np.asarray(array, dtype=np.complex128)
    keep = array != 0
    if mask is not None:
        keep &= mask
    r, c = np.nonzero(keep)
    return SparseSpectralMap(array.shape[0], array.shape[1], r, c, array[r, c])


def threshold_to_sparse(Y: SpectralMap, beta: Beta) -> SparseSpectralMap:
    """Keep entries with |Y(i,j)| > beta (strict)"""
    keep = np.abs(Y.data) > beta.value
    r, c = np.nonzero(keep)
    return SparseSpectralMap(Y.rows, Y.cols, r, c, Y.data[r, c])


def densify(S: SparseSpectralMap) -> SpectralMap:
    if len(S.values) and (S.row_idx.max() >= S.rows or S.col_idx.max() >= S.cols):
        raise StructuralError(f"Sparse index outside {S.rows}x{S.cols}")
    return SpectralMap(S.to_array())


def nnz_fraction(S: SparseSpectralMap) -> float:
    return S.nnz / float(S.rows * S.cols)


def mirror(array: np.ndarray) -> np.ndarray:
    """A(-p mod rows, -q mod cols) over the last two axes"""
    return np.roll(np.flip(array, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))


def hermitian_residual(array: np.ndarray) -> float:
    """max |A(-p,-q) - conj(A(p,q))|"""
    array = np.asarray(array)
    if array.size == 0:
        return 0.0
    return float(np.max(np.abs(mirror(array) - np.conj(array))))


def check_hermitian(X: SpectralMap, tol: float) -> bool:
    if tol < 0:
        raise UsageError(f"tolerance must be >= 0, got {tol}")
    return hermitian_residual(X.data) <= tol
