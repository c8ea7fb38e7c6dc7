"""
SpecNet - Network
Layer graph of spectral blocks, spectral pooling, the domain transition and a dense head,
in spectral mode or as the uncompressed spatial baseline
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NumericIntegrityError, ShapeError, UsageError
from .fft import fft2, ifft2
from .memory_profiler import BYTES_PER_SCALAR, DEFAULT_BYTES_PER_INDEX, MemEvent, MemLedger, feature_map_bytes
from .spectral_block import (
    SpecConvLayer, downsample_adjoint, downsample_array, get_activation, spec_conv_backward, spec_conv_forward,
)
from .tensors import Beta, DenseReal, SparseSpectralMap, hermitian_residual, sparse_from_array

logger = logging.getLogger("SpecNetwork")

LAYER_KINDS = ("spec-conv", "spectral-pool", "to-spatial", "flatten", "dense", "activation-spatial")
MODES = ("spectral", "spatial")
FEATURE_MAP_KINDS = ("spec-conv", "spectral-pool", "to-spatial", "activation-spatial")

# max |imag| tolerated when leaving the spectral domain
SYMMETRY_TOLERANCE = 1e-6

# share of non-zero |Y| a calibrated block keeps at beta=1
CALIBRATION_KEEP = 0.15

FeatureMap = Union[np.ndarray, List[SparseSpectralMap]]


@dataclass
class LayerSpec:
    """One layer descriptor; unused shape fields stay 0"""
    kind: str
    out_channels: int = 0
    kernel_size: int = 0
    target_rows: int = 0     # spectral-pool; 0 means half the input size
    target_cols: int = 0
    out_features: int = 0
    beta: Optional[float] = None   # per-layer override of the model beta
    beta_scale: float = 1.0        # multiplier on the model beta, see calibrate_beta_scales
    activation: str = "tanh"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        return cls(**data)


@dataclass(frozen=True)
class ResolvedLayer:
    """Build-time shape information for one layer"""
    index: int
    spec: LayerSpec
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]
    in_domain: str      # spatial | spectral | vector
    out_domain: str

    @property
    def chained(self) -> bool:
        """Conv fed by another spectral map: no re-padding, circular at the existing size"""
        return self.spec.kind == "spec-conv" and self.in_domain == "spectral"


@dataclass
class ModelSpec:
    input_shape: Tuple[int, int, int]
    num_classes: int
    layers: List[LayerSpec]
    mode: str = "spectral"
    beta: float = 1.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got '{self.mode}'")
        Beta(self.beta)

    def layer_beta(self, layer: LayerSpec) -> Beta:
        if layer.beta is not None:
            return Beta(layer.beta)
        if not (np.isfinite(layer.beta_scale) and layer.beta_scale >= 0):
            raise UsageError(f"beta_scale must be a finite value >= 0, got {layer.beta_scale}")
        return Beta(self.beta * layer.beta_scale)

    def resolve(self) -> List[ResolvedLayer]:
        """Chain shapes through the layers; raises ShapeError on any inconsistency"""
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input shape must be (channels, rows, cols), got {self.input_shape}")
        shape: Tuple[int, ...] = self.input_shape
        domain = "spatial"
        resolved = []
        transitions = 0
        seen_conv = False
        for index, layer in enumerate(self.layers):
            kind = layer.kind
            if kind not in LAYER_KINDS:
                raise ShapeError(f"layer {index}: unknown kind '{kind}'")
            if kind == "spec-conv":
                if domain == "vector":
                    raise ShapeError(f"layer {index}: convolution after flatten")
                if layer.out_channels < 1 or layer.kernel_size < 1:
                    raise ShapeError(f"layer {index}: conv needs out_channels and kernel_size >= 1")
                get_activation(layer.activation)
                self.layer_beta(layer)
                channels, rows, cols = shape
                nk = layer.kernel_size
                if domain == "spatial":
                    out = (layer.out_channels, rows + nk - 1, cols + nk - 1)
                elif rows < nk or cols < nk:
                    raise ShapeError(f"layer {index}: {rows}x{cols} spectral map is smaller than {nk}x{nk} kernel")
                else:
                    out = (layer.out_channels, rows, cols)
                seen_conv = True
                new_domain = "spectral"
            elif kind == "spectral-pool":
                if domain != "spectral":
                    raise ShapeError(f"layer {index}: spectral-pool needs a spectral input")
                channels, rows, cols = shape
                target_rows = layer.target_rows or max(1, rows // 2)
                target_cols = layer.target_cols or max(1, cols // 2)
                if not (1 <= target_rows <= rows and 1 <= target_cols <= cols):
                    raise ShapeError(f"layer {index}: cannot pool {rows}x{cols} to {target_rows}x{target_cols}")
                out = (channels, target_rows, target_cols)
                new_domain = "spectral"
            elif kind == "to-spatial":
                if domain != "spectral":
                    raise ShapeError(f"layer {index}: to-spatial needs a spectral input")
                transitions += 1
                out = shape
                new_domain = "spatial"
            elif kind == "activation-spatial":
                if domain == "spectral":
                    raise ShapeError(f"layer {index}: spatial activation on a spectral map")
                out = shape
                new_domain = domain
            elif kind == "flatten":
                if domain != "spatial":
                    raise ShapeError(f"layer {index}: flatten needs a spatial map")
                out = (int(np.prod(shape)),)
                new_domain = "vector"
            else:
                if domain != "vector":
                    raise ShapeError(f"layer {index}: dense layer needs a flattened input")
                if layer.out_features < 1:
                    raise ShapeError(f"layer {index}: dense needs out_features >= 1")
                out = (layer.out_features,)
                new_domain = "vector"
            resolved.append(ResolvedLayer(index, layer, tuple(shape), tuple(out), domain, new_domain))
            shape, domain = out, new_domain
        if seen_conv and transitions != 1:
            raise ShapeError(f"expected exactly one to-spatial transition, found {transitions}")
        if domain != "vector" or shape != (self.num_classes,):
            raise ShapeError(f"model must end in a dense layer of {self.num_classes} outputs, ends in {shape}")
        return resolved

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Trainable parameter names and shapes in a fixed order"""
        shapes: Dict[str, Tuple[int, ...]] = {}
        for r in self.resolve():
            if r.spec.kind == "spec-conv":
                nk = r.spec.kernel_size
                shapes[f"layer{r.index}.kernels"] = (r.spec.out_channels, r.in_shape[0], nk, nk)
            elif r.spec.kind == "dense":
                shapes[f"layer{r.index}.weights"] = (r.spec.out_features, r.in_shape[0])
                shapes[f"layer{r.index}.bias"] = (r.spec.out_features,)
        return shapes

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
            "mode": self.mode,
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(
            input_shape=tuple(data["input_shape"]),
            num_classes=int(data["num_classes"]),
            layers=[LayerSpec.from_dict(d) for d in data["layers"]],
            mode=data.get("mode", "spectral"),
            beta=float(data.get("beta", 1.0)),
        )


@dataclass
class DenseLayer:
    weights: np.ndarray   # (out, in)
    bias: np.ndarray      # (out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(f"dense weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericIntegrityError("dense parameters must be finite")


class SpecNetModel:
    """ModelSpec plus its parameter arrays"""

    def __init__(self, spec: ModelSpec, params: Dict[str, np.ndarray]):
        self.spec = spec
        self.resolved = spec.resolve()
        shapes = spec.param_shapes()
        if set(params) != set(shapes):
            raise ShapeError(f"parameters {sorted(params)} do not match model {sorted(shapes)}")
        self.params: Dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            value = np.asarray(params[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"parameter {name} has shape {value.shape}, expected {shape}")
            self.params[name] = value

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int = 0) -> "SpecNetModel":
        """Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases"""
        rng = np.random.Generator(np.random.PCG64(seed))
        params = {}
        for name, shape in spec.param_shapes().items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
                continue
            if len(shape) == 4:
                receptive = shape[2] * shape[3]
                fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
            else:
                fan_in, fan_out = shape[1], shape[0]
            s = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-s, s, size=shape)
        return cls(spec, params)

    @property
    def mode(self) -> str:
        return self.spec.mode

    def with_mode(self, mode: str, beta: Optional[float] = None) -> "SpecNetModel":
        """Same weights under another mode and/or beta"""
        data = self.spec.to_dict()
        data["mode"] = mode
        if beta is not None:
            data["beta"] = float(beta)
        return SpecNetModel(ModelSpec.from_dict(data), {k: v.copy() for k, v in self.params.items()})

    def conv_layer(self, index: int) -> SpecConvLayer:
        layer = self.spec.layers[index]
        return SpecConvLayer(self.params[f"layer{index}.kernels"], self.spec.layer_beta(layer), layer.activation)

    def dense_layer(self, index: int) -> DenseLayer:
        return DenseLayer(self.params[f"layer{index}.weights"], self.params[f"layer{index}.bias"])

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def lenet_mini_spec(
    input_shape: Tuple[int, int, int],
    num_classes: int,
    mode: str = "spectral",
    beta: float = 1.0,
    activation: str = "tanh",
) -> ModelSpec:
    """conv(8, 3x3) -> spectral-pool(half) -> conv(16, 3x3) -> to-spatial -> flatten -> dense"""
    layers = [
        LayerSpec("spec-conv", out_channels=8, kernel_size=3, activation=activation),
        LayerSpec("spectral-pool"),
        LayerSpec("spec-conv", out_channels=16, kernel_size=3, activation=activation),
        LayerSpec("to-spatial"),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=num_classes),
    ]
    return ModelSpec(tuple(input_shape), num_classes, layers, mode, beta)


def build_spec_lenet_mini(
    input_shape: Tuple[int, int, int],
    num_classes: int,
    mode: str = "spectral",
    beta: float = 1.0,
    activation: str = "tanh",
    seed: int = 0,
    calibration: Optional[np.ndarray] = None,
) -> SpecNetModel:
    """Initialized SpecLeNet-mini; with calibration images the block beta scales are fitted on them"""
    spec = lenet_mini_spec(input_shape, num_classes, mode, beta, activation)
    model = SpecNetModel.initialize(spec, seed)
    if calibration is not None:
        model = calibrate_beta_scales(model, calibration)
    logger.info(f"Built SpecLeNet-mini {spec.input_shape} -> {num_classes} ({mode}, beta={beta}), "
                f"{model.num_parameters()} parameters")
    return model


# ============== Reference and spatial operators ==============

def spatial_conv_reference(x: DenseReal, k: DenseReal) -> DenseReal:
    """Full convolution y(i,j) = sum_m sum_n x(m,n) k(i-m, j-n) by direct summation"""
    if k.rows != k.cols:
        raise ShapeError(f"kernel must be square, got {k.shape}")
    nk = k.rows
    y = np.zeros((x.rows + nk - 1, x.cols + nk - 1))
    for m in range(x.rows):
        for n in range(x.cols):
            y[m:m + nk, n:n + nk] += x.data[m, n] * k.data
    return DenseReal(y)


def _shifted(x: np.ndarray, u: int, v: int, out_rows: int, out_cols: int, circular: bool) -> np.ndarray:
    if circular:
        return np.roll(x, shift=(u, v), axis=(-2, -1))
    rows, cols = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (out_rows, out_cols))
    out[..., u:u + rows, v:v + cols] = x
    return out


def direct_conv(x: np.ndarray, kernels: np.ndarray, circular: bool) -> np.ndarray:
    """Multi-channel spatial convolution, full size or circular at the input size"""
    nk = kernels.shape[-1]
    rows, cols = x.shape[-2:]
    out_rows, out_cols = (rows, cols) if circular else (rows + nk - 1, cols + nk - 1)
    y = np.zeros((kernels.shape[0], out_rows, out_cols))
    for u in range(nk):
        for v in range(nk):
            y += np.einsum("oi,ihw->ohw", kernels[:, :, u, v], _shifted(x, u, v, out_rows, out_cols, circular))
    return y


def direct_conv_backward(grad_y: np.ndarray, x: np.ndarray, kernels: np.ndarray, circular: bool
                         ) -> Tuple[np.ndarray, np.ndarray]:
    nk = kernels.shape[-1]
    rows, cols = x.shape[-2:]
    out_rows, out_cols = grad_y.shape[-2:]
    grad_k = np.zeros_like(kernels)
    grad_x = np.zeros_like(x)
    for u in range(nk):
        for v in range(nk):
            grad_k[:, :, u, v] = np.einsum("ohw,ihw->oi", grad_y, _shifted(x, u, v, out_rows, out_cols, circular))
            if circular:
                back = np.roll(grad_y, shift=(-u, -v), axis=(-2, -1))
            else:
                back = grad_y[:, u:u + rows, v:v + cols]
            grad_x += np.einsum("oi,ohw->ihw", kernels[:, :, u, v], back)
    return grad_x, grad_k


def _spectral_to_spatial(maps: Sequence[SparseSpectralMap]) -> np.ndarray:
    stacked = np.stack([m.to_array() for m in maps])
    spatial = ifft2(stacked)
    residue = float(np.max(np.abs(spatial.imag))) if spatial.size else 0.0
    if residue > SYMMETRY_TOLERANCE:
        raise NumericIntegrityError(
            f"spectral map is not Hermitian: imaginary residue {residue:.3e} > {SYMMETRY_TOLERANCE:.0e} "
            f"(symmetry residual {hermitian_residual(stacked):.3e})"
        )
    return spatial.real


def to_spatial(Z: SparseSpectralMap) -> DenseReal:
    """Real part of ifft2d(densify(Z)); the imaginary residue must stay within tolerance"""
    return DenseReal(_spectral_to_spatial([Z])[0])


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != layer.weights.shape[1]:
        raise ShapeError(f"dense layer expects {layer.weights.shape[1]} inputs, got {x.shape[0]}")
    return layer.weights @ x + layer.bias


def dense_backward(x: np.ndarray, layer: DenseLayer, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_x, grad_weights, grad_bias)"""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.shape[0] != layer.weights.shape[0]:
        raise ShapeError(f"dense gradient has {grad.shape[0]} entries, layer has {layer.weights.shape[0]} outputs")
    return layer.weights.T @ grad, np.outer(grad, x), grad.copy()


def softmax_xent(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """Cross-entropy of softmax(logits) against label, with max-subtraction"""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.shape[0]:
        raise ShapeError(f"label {label} outside {logits.shape[0]} classes")
    shifted = logits - np.max(logits)
    log_norm = np.log(np.sum(np.exp(shifted)))
    probs = np.exp(shifted - log_norm)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(log_norm - shifted[label]), grad


# ============== Per-layer forward / backward ==============

@dataclass
class LayerCache:
    kind: str
    data: Dict[str, Any] = field(default_factory=dict)


def _forward_layer(model: SpecNetModel, r: ResolvedLayer, fm: FeatureMap, conv: Optional[SpecConvLayer]
                   ) -> Tuple[FeatureMap, LayerCache]:
    kind = r.spec.kind
    spectral = model.mode == "spectral"
    cache = LayerCache(kind)

    if kind == "spec-conv":
        if spectral:
            Z, block = spec_conv_forward(fm, conv)
            cache.data["block"] = block
            return Z, cache
        y = direct_conv(fm, conv.kernels, circular=r.chained)
        Y = fft2(y)
        act = get_activation(conv.activation)
        cache.data.update(x=fm, Y=Y, circular=r.chained, activation=conv.activation)
        return ifft2(act.apply(Y)).real, cache

    if kind == "spectral-pool":
        _, target_rows, target_cols = r.out_shape
        rows, cols = r.in_shape[-2:]
        cache.data["source"] = (rows, cols)
        if spectral:
            stacked = np.stack([m.to_array() for m in fm])
            cache.data["support"] = stacked != 0
            pooled = downsample_array(stacked, target_rows, target_cols)
            return [sparse_from_array(p) for p in pooled], cache
        return ifft2(downsample_array(fft2(fm), target_rows, target_cols)).real, cache

    if kind == "to-spatial":
        if spectral:
            cache.data["support"] = np.stack([m.support_mask() for m in fm])
            return _spectral_to_spatial(fm), cache
        return fm, cache

    if kind == "activation-spatial":
        out = np.tanh(fm)
        cache.data["out"] = out
        return out, cache

    if kind == "flatten":
        cache.data["shape"] = fm.shape
        return fm.reshape(-1), cache

    layer = model.dense_layer(r.index)
    cache.data["x"] = fm
    return dense_forward(fm, layer), cache


def _backward_layer(model: SpecNetModel, r: ResolvedLayer, cache: LayerCache, grad: Any,
                    grads: Dict[str, np.ndarray]) -> Any:
    kind = cache.kind
    spectral = model.mode == "spectral"

    if kind == "dense":
        layer = model.dense_layer(r.index)
        grad_x, grad_w, grad_b = dense_backward(cache.data["x"], layer, grad)
        grads[f"layer{r.index}.weights"] += grad_w
        grads[f"layer{r.index}.bias"] += grad_b
        return grad_x

    if kind == "flatten":
        return np.asarray(grad).reshape(cache.data["shape"])

    if kind == "activation-spatial":
        out = cache.data["out"]
        return grad * (1.0 - out * out)

    if kind == "to-spatial":
        if not spectral:
            return grad
        rows, cols = grad.shape[-2:]
        grad_Z = fft2(grad) / (rows * cols)
        support = cache.data["support"]
        return [sparse_from_array(g, s) for g, s in zip(grad_Z, support)]

    if kind == "spectral-pool":
        rows, cols = cache.data["source"]
        if spectral:
            stacked = np.stack([g.to_array() for g in grad])
            back = downsample_adjoint(stacked, rows, cols)
            return [sparse_from_array(b, s) for b, s in zip(back, cache.data["support"])]
        target_rows, target_cols = grad.shape[-2:]
        grad_P = fft2(grad) / (target_rows * target_cols)
        return rows * cols * ifft2(downsample_adjoint(grad_P, rows, cols)).real

    # spec-conv
    name = f"layer{r.index}.kernels"
    if spectral:
        grad_input, grad_kernel = spec_conv_backward(grad, cache.data["block"])
        grads[name] += grad_kernel
        if cache.data["block"].input_was_spatial:
            return np.stack([g.data for g in grad_input])
        return grad_input
    Y = cache.data["Y"]
    size = Y.shape[-2] * Y.shape[-1]
    act = get_activation(cache.data["activation"])
    grad_Y = act.backward(fft2(grad) / size, Y)
    grad_y = size * ifft2(grad_Y).real
    grad_x, grad_k = direct_conv_backward(grad_y, cache.data["x"], model.params[name], cache.data["circular"])
    grads[name] += grad_k
    return grad_x


def model_forward(
    model: SpecNetModel,
    batch: np.ndarray,
    ledger: Optional[MemLedger] = None,
    precision: str = "f64",
    bytes_per_index: int = DEFAULT_BYTES_PER_INDEX,
) -> Tuple[np.ndarray, List[List[LayerCache]], List[MemEvent]]:
    """
    Run every layer in order for each sample of a (B, C, H, W) batch.
    One ledger step is recorded per stored feature-map layer, summed over the batch.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[None]
    if tuple(batch.shape[1:]) != model.spec.input_shape:
        raise ShapeError(f"batch samples have shape {batch.shape[1:]}, model expects {model.spec.input_shape}")
    if precision not in BYTES_PER_SCALAR:
        raise UsageError(f"precision must be one of {sorted(BYTES_PER_SCALAR)}, got '{precision}'")
    bytes_per_scalar = BYTES_PER_SCALAR[precision]

    convs = {r.index: model.conv_layer(r.index) for r in model.resolved if r.spec.kind == "spec-conv"}
    layer_bytes = [0] * len(model.resolved)
    logits = np.zeros((batch.shape[0], model.spec.num_classes))
    caches: List[List[LayerCache]] = []
    for b, sample in enumerate(batch):
        fm: FeatureMap = sample
        sample_caches = []
        for r in model.resolved:
            fm, cache = _forward_layer(model, r, fm, convs.get(r.index))
            sample_caches.append(cache)
            if r.spec.kind in FEATURE_MAP_KINDS:
                layer_bytes[r.index] += feature_map_bytes(fm, bytes_per_scalar, bytes_per_index)
        logits[b] = fm
        caches.append(sample_caches)

    local = MemLedger()
    local.begin_pass()
    for r in model.resolved:
        if r.spec.kind in FEATURE_MAP_KINDS:
            local.record(r.index, model.mode, layer_bytes[r.index])
    if ledger is not None:
        ledger.extend(local)
    return logits, caches, list(local.events)


def model_backward(model: SpecNetModel, caches: List[List[LayerCache]], grad_logits: np.ndarray
                   ) -> Dict[str, np.ndarray]:
    """Parameter gradients summed over the batch in sample order"""
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != (len(caches), model.spec.num_classes):
        raise ShapeError(f"grad_logits has shape {grad_logits.shape}, expected {(len(caches), model.spec.num_classes)}")
    grads = {name: np.zeros_like(value) for name, value in model.params.items()}
    for sample_caches, g in zip(caches, grad_logits):
        grad: Any = g
        for r, cache in zip(reversed(model.resolved), reversed(sample_caches)):
            grad = _backward_layer(model, r, cache, grad, grads)
    return grads


def spectral_magnitudes(model: SpecNetModel, sample: np.ndarray) -> List[np.ndarray]:
    """|Y| of every spectral conv block for one sample (spectral mode forward)"""
    spectral = model if model.mode == "spectral" else model.with_mode("spectral")
    _, caches, _ = model_forward(spectral, sample[None])
    out = []
    for cache in caches[0]:
        if cache.kind == "spec-conv":
            out.append(cache.data["block"].magnitudes())
    return out


def calibrate_beta_scales(model: SpecNetModel, images: np.ndarray, keep: float = CALIBRATION_KEEP) -> SpecNetModel:
    """
    Fit the beta_scale of every spectral block on a calibration batch, first block first.
    A block's scale is the (1 - keep) quantile of its non-zero |Y| over the batch, measured
    with the earlier blocks already thresholded at beta=1, so beta=1 keeps about `keep` of
    each block's spectrum. Blocks with an explicit per-layer beta are left alone.
    Returns a copy; mode, beta and weights are unchanged.
    """
    if not 0 < keep <= 1:
        raise UsageError(f"keep must lie in (0, 1], got {keep}")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if not len(images):
        raise UsageError("calibration needs at least one image")

    data = model.spec.to_dict()
    data.update(mode="spectral", beta=1.0)
    blocks = [r.index for r in model.resolved if r.spec.kind == "spec-conv" and r.spec.beta is None]
    for index in blocks:
        data["layers"][index]["beta_scale"] = 0.0
        partial = SpecNetModel(ModelSpec.from_dict(data), model.params)
        _, caches, _ = model_forward(partial, images)
        magnitudes = np.concatenate([sample[index].data["block"].magnitudes().ravel() for sample in caches])
        magnitudes = magnitudes[magnitudes > 0]
        scale = float(np.quantile(magnitudes, 1.0 - keep)) if magnitudes.size else 1.0
        data["layers"][index]["beta_scale"] = scale
        logger.debug(f"layer {index}: beta_scale {scale:.4g} from {magnitudes.size} magnitudes")

    data.update(mode=model.spec.mode, beta=model.spec.beta)
    calibrated = SpecNetModel(ModelSpec.from_dict(data), {k: v.copy() for k, v in model.params.items()})
    scales = ", ".join(f"{calibrated.spec.layers[i].beta_scale:.3g}" for i in blocks)
    logger.info(f"Calibrated beta scales on {len(images)} images (keep {keep:g}): [{scales}]")
    return calibrated
