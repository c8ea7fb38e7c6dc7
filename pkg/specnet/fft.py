"""
SpecNet - FFT Engine
Exact 2D DFT of arbitrary size (mixed radix + Bluestein), zero padding and a direct oracle
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np

from .errors import DimensionError
from .tensors import DenseReal, SpectralMap

FORWARD = -1
INVERSE = 1

# Primes up to this length use a direct DFT matrix; larger primes go through Bluestein.
DIRECT_PRIME_LIMIT = 32


@dataclass(frozen=True)
class PadSpec:
    """Target size (M', N') of a zero-padded map"""
    target_rows: int
    target_cols: int

    @classmethod
    def full_convolution(cls, rows: int, cols: int, kernel_size: int) -> "PadSpec":
        """M' = M + N_k - 1, N' = N + N_k - 1"""
        return cls(rows + kernel_size - 1, cols + kernel_size - 1)


def pad_array(array: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Zero-pad the last two axes to (rows, cols), keeping data top-left"""
    src_rows, src_cols = array.shape[-2:]
    if rows < src_rows or cols < src_cols:
        raise DimensionError(f"cannot pad {src_rows}x{src_cols} down to {rows}x{cols}")
    out = np.zeros(array.shape[:-2] + (rows, cols), dtype=array.dtype)
    out[..., :src_rows, :src_cols] = array
    return out


def zero_pad(x: DenseReal, p: PadSpec) -> DenseReal:
    return DenseReal(pad_array(x.data, p.target_rows, p.target_cols))


@lru_cache(maxsize=None)
def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@lru_cache(maxsize=None)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    # reduce k*j mod n before scaling to keep phases exact for large products
    phase = np.outer(k, k) % n
    return _readonly(np.exp(sign * 2j * np.pi * phase / n))


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int, sign: int) -> np.ndarray:
    n = p * m
    phase = np.outer(np.arange(p), np.arange(m)) % n
    return _readonly(np.exp(sign * 2j * np.pi * phase / n))


@lru_cache(maxsize=None)
def _bluestein_plan(n: int, sign: int) -> Tuple[np.ndarray, np.ndarray, int]:
    length = 1 << (2 * n - 1).bit_length()
    j = np.arange(n)
    chirp = np.exp(sign * 1j * np.pi * ((j * j) % (2 * n)) / n)
    b = np.zeros(length, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[length - n + 1:] = np.conj(chirp[1:])[::-1]
    return _readonly(chirp), _readonly(_fft_last(b, FORWARD)), length


def _bluestein(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    chirp, b_hat, length = _bluestein_plan(n, sign)
    padded = np.zeros(a.shape[:-1] + (length,), dtype=np.complex128)
    padded[..., :n] = a * chirp
    conv = _fft_last(_fft_last(padded, FORWARD) * b_hat, INVERSE) / length
    return conv[..., :n] * chirp


def _fft_last(a: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis with exponent sign*2*pi*i*jk/n"""
    n = a.shape[-1]
    if n == 1:
        return np.array(a, dtype=np.complex128)
    p = _smallest_factor(n)
    if p == n:
        if n <= DIRECT_PRIME_LIMIT:
            return a @ _dft_matrix(n, sign)
        return _bluestein(a, sign)

    # decimation in time: x_r[j] = x[j*p + r], X[s*m + k] = sum_r W_p^{rs} W_n^{rk} F_r[k]
    m = n // p
    sub = np.swapaxes(a.reshape(a.shape[:-1] + (m, p)), -1, -2)
    partial = _fft_last(np.ascontiguousarray(sub), sign) * _twiddles(p, m, sign)
    return (_dft_matrix(p, sign) @ partial).reshape(a.shape[:-1] + (n,))


def fft2(array: np.ndarray) -> np.ndarray:
    """Forward 2D DFT over the last two axes (any leading batch axes)"""
    out = _fft_last(np.asarray(array, dtype=np.complex128), FORWARD)
    out = _fft_last(np.ascontiguousarray(np.swapaxes(out, -1, -2)), FORWARD)
    return np.swapaxes(out, -1, -2)


def ifft2(array: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT over the last two axes, carrying 1/(rows*cols)"""
    rows, cols = array.shape[-2:]
    out = _fft_last(np.asarray(array, dtype=np.complex128), INVERSE)
    out = _fft_last(np.ascontiguousarray(np.swapaxes(out, -1, -2)), INVERSE)
    return np.swapaxes(out, -1, -2) / (rows * cols)


def fft2d(x: Union[DenseReal, SpectralMap]) -> SpectralMap:
    return SpectralMap(fft2(x.data))


def ifft2d(X: SpectralMap) -> SpectralMap:
    return SpectralMap(ifft2(X.data))


def dft2d_reference(x: Union[DenseReal, SpectralMap, np.ndarray]) -> SpectralMap:
    """Direct double-sum DFT, O(M^2 N^2); test oracle only"""
    data = np.asarray(x.data if hasattr(x, "data") else x, dtype=np.complex128)
    rows, cols = data.shape
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    out = np.zeros((rows, cols), dtype=np.complex128)
    for p in range(rows):
        for q in range(cols):
            phase = ((p * m) % rows) / rows + ((q * n) % cols) / cols
            out[p, q] = np.sum(data * np.exp(-2j * np.pi * phase))
    return SpectralMap(out)
