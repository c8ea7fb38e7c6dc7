"""
SpecNet - Spectral Block
Convolution, beta compression and symmetry-preserving activation in the spectral domain,
with the approximate-gradient backward pass and spectral pooling
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, ShapeError, StructuralError, UsageError
from .fft import PadSpec, fft2, ifft2, pad_array
from .tensors import Beta, DenseReal, SparseSpectralMap, SpectralMap, sparse_from_array, threshold_to_sparse

logger = logging.getLogger("SpectralBlock")


@dataclass(frozen=True)
class PointwiseActivation:
    """Real function applied separately to the real and imaginary parts"""
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.fn(values.real) + 1j * self.fn(values.imag)

    def backward(self, grad: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Gradient packed as d/da + i d/db, pre-activation values a+ib"""
        return grad.real * self.grad(values.real) + 1j * grad.imag * self.grad(values.imag)


def _tanh_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS: Dict[str, PointwiseActivation] = {
    "tanh": PointwiseActivation("tanh", np.tanh, _tanh_grad),
    "softsign": PointwiseActivation(
        "softsign",
        lambda x: x / (1.0 + np.abs(x)),
        lambda x: 1.0 / (1.0 + np.abs(x)) ** 2,
    ),
    "identity": PointwiseActivation("identity", lambda x: np.array(x, dtype=np.float64), np.ones_like),
}


def get_activation(name: str) -> PointwiseActivation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise UsageError(f"unknown activation '{name}', expected one of {sorted(ACTIVATIONS)}") from None


def check_activation_rules(name: str, samples: int = 2001, span: float = 8.0) -> bool:
    """Sampled check: finite non-negative derivative, monotone non-decreasing, odd"""
    act = get_activation(name)
    x = np.linspace(-span, span, samples)
    y = act.fn(x)
    d = act.grad(x)
    cheap_grad = bool(np.all(np.isfinite(d)) and np.all(d >= 0))
    monotone = bool(np.all(np.diff(y) >= 0))
    odd = bool(np.allclose(act.fn(-x), -y, rtol=0, atol=1e-12))
    return cheap_grad and monotone and odd


def activate(Yhat: SparseSpectralMap, activation: str = "tanh") -> SparseSpectralMap:
    """f(a+ib) = h(a) + i g(b) on every stored entry; support is unchanged"""
    return Yhat.with_values(get_activation(activation).apply(Yhat.values))


@dataclass
class SpecConvLayer:
    """Spatial kernel bank (out, in, N_k, N_k) plus the layer's beta"""
    kernels: np.ndarray
    beta: Beta = field(default_factory=Beta)
    activation: str = "tanh"
    _spectral: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        kernels = np.asarray(self.kernels, dtype=np.float64)
        if kernels.ndim == 2:
            kernels = kernels[None, None]
        if kernels.ndim != 4 or kernels.shape[-1] != kernels.shape[-2] or kernels.shape[-1] < 1:
            raise ShapeError(f"kernel bank must be (out, in, N_k, N_k), got {kernels.shape}")
        if not np.all(np.isfinite(kernels)):
            raise StructuralError("kernel entries must be finite")
        if not isinstance(self.beta, Beta):
            self.beta = Beta(self.beta)
        get_activation(self.activation)
        self.kernels = kernels

    @classmethod
    def from_kernel(cls, kernel: DenseReal, beta: Beta = Beta(), activation: str = "tanh") -> "SpecConvLayer":
        return cls(kernel.data[None, None], beta, activation)

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[-1]

    def kernel(self, out_channel: int, in_channel: int) -> DenseReal:
        return DenseReal(self.kernels[out_channel, in_channel])

    def spectral_kernels(self, rows: int, cols: int) -> np.ndarray:
        """K = F(k zero-padded to rows x cols), memoised per size"""
        key = (rows, cols)
        if key not in self._spectral:
            self._spectral[key] = fft2(pad_array(self.kernels, rows, cols))
        return self._spectral[key]


@dataclass
class BlockCache:
    """Intermediate state of one forward pass, kept for backward"""
    X: np.ndarray                       # (in, M', N') spectral input
    K: np.ndarray                       # (out, in, M', N') spectral kernels
    support: np.ndarray                 # (out, M', N') kept indices of Yhat
    yhat: List[SparseSpectralMap]
    input_was_spatial: bool
    input_dims: Tuple[int, int]
    kernel_size: int
    activation: str = "tanh"
    input_support: Optional[np.ndarray] = None   # (in, M', N') for spectral input

    def magnitudes(self) -> np.ndarray:
        """|Y| before thresholding, (out, M', N')"""
        return np.abs(np.einsum("oihw,ihw->ohw", self.K, self.X))


FeatureInput = Union[DenseReal, SparseSpectralMap, np.ndarray, Sequence[Union[DenseReal, SparseSpectralMap]]]


def _stack_input(x: FeatureInput) -> Tuple[bool, np.ndarray, Optional[np.ndarray]]:
    """(is_spatial, (C, M, N) array, support mask for spectral input)"""
    if isinstance(x, np.ndarray):
        data = np.asarray(x, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        return True, data, None
    if isinstance(x, (DenseReal, SparseSpectralMap)):
        x = [x]
    channels = list(x)
    if not channels:
        raise ShapeError("empty channel list")
    if all(isinstance(c, DenseReal) for c in channels):
        return True, np.stack([c.data for c in channels]), None
    if all(isinstance(c, SparseSpectralMap) for c in channels):
        shapes = {c.shape for c in channels}
        if len(shapes) != 1:
            raise ShapeError(f"spectral channels differ in size: {sorted(shapes)}")
        return False, np.stack([c.to_array() for c in channels]), np.stack([c.support_mask() for c in channels])
    raise ShapeError("channels must be all spatial or all spectral")


def spec_conv_forward(x: FeatureInput, layer: SpecConvLayer) -> Tuple[List[SparseSpectralMap], BlockCache]:
    """
    Forward propagation of the convolutional block.
    Spatial input is padded to (M+N_k-1, N+N_k-1) and transformed; spectral input is used
    as-is (circular convolution at its size). Returns one sparse map per output channel.
    """
    spatial, data, input_support = _stack_input(x)
    if data.shape[0] != layer.in_channels:
        raise ShapeError(f"layer expects {layer.in_channels} input channels, got {data.shape[0]}")
    nk = layer.kernel_size
    rows, cols = data.shape[-2:]
    if spatial:
        pad = PadSpec.full_convolution(rows, cols, nk)
        X = fft2(pad_array(data, pad.target_rows, pad.target_cols))
    else:
        if rows < nk or cols < nk:
            raise DimensionError(f"spectral input {rows}x{cols} is smaller than the {nk}x{nk} kernel")
        X = data
    K = layer.spectral_kernels(*X.shape[-2:])
    # multi-channel: sum spectral products over inputs, threshold the summed map
    Y = np.einsum("oihw,ihw->ohw", K, X)
    yhat = [threshold_to_sparse(SpectralMap(Y[o]), layer.beta) for o in range(layer.out_channels)]
    support = np.stack([y.support_mask() for y in yhat])
    Z = [activate(y, layer.activation) for y in yhat]
    cache = BlockCache(
        X=X, K=K, support=support, yhat=yhat, input_was_spatial=spatial, input_dims=(rows, cols),
        kernel_size=nk, activation=layer.activation, input_support=input_support,
    )
    return Z, cache


def spec_conv_backward(
    grad_Z: Union[SparseSpectralMap, Sequence[SparseSpectralMap]], cache: BlockCache
) -> Tuple[Union[List[DenseReal], List[SparseSpectralMap]], np.ndarray]:
    """
    Approximate-gradient backward pass.
    Complex values are treated as (real, imag) pairs; gradients flow only on the kept support.
    Returns (grad_input per input channel, grad_kernel of shape (out, in, N_k, N_k)).
    """
    if isinstance(grad_Z, SparseSpectralMap):
        grad_Z = [grad_Z]
    grad_Z = list(grad_Z)
    out_channels = cache.support.shape[0]
    if len(grad_Z) != out_channels:
        raise StructuralError(f"expected {out_channels} gradient maps, got {len(grad_Z)}")

    act = get_activation(cache.activation)
    size_rows, size_cols = cache.X.shape[-2:]
    grad_Y = np.zeros((out_channels, size_rows, size_cols), dtype=np.complex128)
    for o, (g, y) in enumerate(zip(grad_Z, cache.yhat)):
        if g.shape != y.shape:
            raise StructuralError(f"gradient map {g.shape} does not match cached {y.shape}")
        if not g.nnz:
            continue
        if not np.all(cache.support[o, g.row_idx, g.col_idx]):
            raise StructuralError(f"gradient for channel {o} has entries outside the kept support")
        pre = y.to_array()[g.row_idx, g.col_idx]
        grad_Y[o, g.row_idx, g.col_idx] = act.backward(g.values, pre)

    grad_X = np.einsum("ohw,oihw->ihw", grad_Y, np.conj(cache.K))
    grad_K = np.einsum("ohw,ihw->oihw", grad_Y, np.conj(cache.X))

    # adjoint of the unnormalized forward transform on a real map: size * Re(ifft2(.))
    size = size_rows * size_cols
    nk = cache.kernel_size
    grad_kernel = size * ifft2(grad_K).real[..., :nk, :nk]

    if cache.input_was_spatial:
        rows, cols = cache.input_dims
        spatial = size * ifft2(grad_X).real[..., :rows, :cols]
        return [DenseReal(ch) for ch in spatial], grad_kernel
    return [sparse_from_array(grad_X[c], cache.input_support[c]) for c in range(grad_X.shape[0])], grad_kernel


@lru_cache(maxsize=None)
def _truncation_matrix(source: int, target: int) -> np.ndarray:
    """(target, source) selection of the centred low-frequency band, Nyquist symmetrized"""
    if target == source:
        matrix = np.eye(source)
    else:
        matrix = np.zeros((target, source))
        half = target // 2
        for j in range(target):
            if target % 2 == 0 and j == half:
                matrix[j, half] += 0.5
                matrix[j, source - half] += 0.5
            else:
                freq = j if j <= half else j - target
                matrix[j, freq % source] = 1.0
    matrix.setflags(write=False)
    return matrix


def _check_targets(rows: int, cols: int, target_rows: int, target_cols: int):
    if not (1 <= target_rows <= rows and 1 <= target_cols <= cols):
        raise DimensionError(f"cannot downsample {rows}x{cols} to {target_rows}x{target_cols}")


def downsample_array(array: np.ndarray, target_rows: int, target_cols: int) -> np.ndarray:
    """Spectral pooling over the last two axes"""
    rows, cols = array.shape[-2:]
    _check_targets(rows, cols, target_rows, target_cols)
    scale = (target_rows * target_cols) / (rows * cols)
    return scale * (_truncation_matrix(rows, target_rows) @ array @ _truncation_matrix(cols, target_cols).T)


def downsample_adjoint(grad: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Adjoint of downsample_array back to (rows, cols)"""
    target_rows, target_cols = grad.shape[-2:]
    _check_targets(rows, cols, target_rows, target_cols)
    scale = (target_rows * target_cols) / (rows * cols)
    return scale * (_truncation_matrix(rows, target_rows).T @ grad @ _truncation_matrix(cols, target_cols))


def spectral_downsample(X: SpectralMap, target_rows: int, target_cols: int) -> SpectralMap:
    return SpectralMap(downsample_array(X.data, target_rows, target_cols))


def spectral_downsample_backward(grad_out: SpectralMap, rows: int, cols: int) -> SpectralMap:
    return SpectralMap(downsample_adjoint(grad_out.data, rows, cols))
