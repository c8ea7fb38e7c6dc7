"""
SpecNet - Self Test
Oracle suites shared by the test-suite and the selftest command:
FFT vs direct DFT, spectral vs direct convolution, finite-difference gradients, Hermitian symmetry
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import NumericIntegrityError
from .fft import dft2d_reference, fft2, ifft2
from .network import (
    LayerSpec, ModelSpec, SpecNetModel, model_backward, model_forward, softmax_xent, spatial_conv_reference,
    spectral_magnitudes, to_spatial,
)
from .spectral_block import SpecConvLayer, spec_conv_forward
from .tensors import Beta, DenseReal, check_hermitian, densify, hermitian_residual

logger = logging.getLogger("SelfTest")

FFT_TOLERANCE = 1e-10
CONV_TOLERANCE = 1e-8
HERMITIAN_TOLERANCE = 1e-9
IMAG_TOLERANCE = 1e-6
GRADIENT_TOLERANCE = 1e-4
BETA_MARGIN = 1e-4

SYMMETRY_BETAS = (0.0, 0.5, 1.0, 1.5)
GRADIENT_BETAS = (0.5, 0.25, 0.75, 1.0, 0.0)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    max_error: float
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / scale


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of f() with respect to every entry of x, perturbed in place"""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + h
        plus = f()
        x[idx] = saved - h
        minus = f()
        x[idx] = saved
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def beta_margin(model: SpecNetModel, batch: np.ndarray, beta: float) -> float:
    """Smallest distance between a block threshold and any of its spectral magnitudes over the batch"""
    spectral = model.with_mode("spectral", beta)
    thresholds = [spectral.spec.layer_beta(layer).value for layer in spectral.spec.layers if layer.kind == "spec-conv"]
    margin = np.inf
    for sample in batch:
        for magnitudes, threshold in zip(spectral_magnitudes(spectral, sample), thresholds):
            margin = min(margin, float(np.min(np.abs(magnitudes - threshold))))
    return margin


def batch_loss(model: SpecNetModel, batch: np.ndarray, labels: Sequence[int]) -> float:
    logits, _, _ = model_forward(model, batch)
    return float(sum(softmax_xent(row, int(label))[0] for row, label in zip(logits, labels)))


def check_model_gradients(model: SpecNetModel, batch: np.ndarray, labels: Sequence[int], h: float = 1e-6
                          ) -> Dict[str, float]:
    """Relative error of model_backward against central differences, per parameter"""
    logits, caches, _ = model_forward(model, batch)
    grad_logits = np.stack([softmax_xent(row, int(label))[1] for row, label in zip(logits, labels)])
    analytic = model_backward(model, caches, grad_logits)
    errors = {}
    for name, value in model.params.items():
        numeric = numeric_gradient(lambda: batch_loss(model, batch, labels), value, h)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


def tiny_model_spec(mode: str = "spectral", beta: float = 0.5, pooled: bool = False) -> ModelSpec:
    """6x6 single-conv model, or an 8x8 conv-pool-conv model when pooled"""
    if not pooled:
        layers = [LayerSpec("spec-conv", out_channels=2, kernel_size=3), LayerSpec("to-spatial"),
                  LayerSpec("flatten"), LayerSpec("dense", out_features=3)]
        return ModelSpec((1, 6, 6), 3, layers, mode, beta)
    layers = [LayerSpec("spec-conv", out_channels=2, kernel_size=3), LayerSpec("spectral-pool"),
              LayerSpec("spec-conv", out_channels=2, kernel_size=3), LayerSpec("to-spatial"),
              LayerSpec("flatten"), LayerSpec("dense", out_features=3)]
    return ModelSpec((1, 8, 8), 3, layers, mode, beta)


# ============== Suites ==============

def fft_suite(seed: int = 0, cases: int = 100, max_side: int = 16) -> SuiteResult:
    rng = _rng(seed)
    worst = 0.0
    for _ in range(cases):
        rows, cols = (int(v) for v in rng.integers(1, max_side + 1, size=2))
        x = rng.standard_normal((rows, cols))
        X = fft2(x)
        worst = max(worst, relative_error(X, dft2d_reference(x).data), relative_error(ifft2(X), x))
    return SuiteResult("fft", worst <= FFT_TOLERANCE, cases, worst)


def conv_suite(seed: int = 0, cases: int = 50, max_side: int = 16, max_kernel: int = 5) -> SuiteResult:
    """Spectral product at beta=0 against the direct convolution sum"""
    rng = _rng(seed)
    worst = 0.0
    for _ in range(cases):
        rows, cols = (int(v) for v in rng.integers(1, max_side + 1, size=2))
        nk = int(rng.integers(1, max_kernel + 1))
        x = DenseReal(rng.standard_normal((rows, cols)))
        k = DenseReal(rng.standard_normal((nk, nk)))
        Z, _ = spec_conv_forward(x, SpecConvLayer.from_kernel(k, Beta(0.0), "identity"))
        y = to_spatial(Z[0]).data
        expected = spatial_conv_reference(x, k).data
        worst = max(worst, float(np.max(np.abs(y - expected))) / max(1.0, float(np.max(np.abs(expected)))))
    return SuiteResult("conv", worst <= CONV_TOLERANCE, cases, worst)


def symmetry_suite(seed: int = 0, cases: int = 50, betas: Sequence[float] = SYMMETRY_BETAS) -> SuiteResult:
    """Conv + threshold + activation on real input stays Hermitian and converts back to a real map"""
    rng = _rng(seed)
    worst_sym, worst_imag = 0.0, 0.0
    count = 0
    for case in range(cases):
        rows, cols = (int(v) for v in rng.integers(2, 13, size=2))
        nk = int(rng.integers(1, 4))
        x = rng.standard_normal((2, rows, cols))
        kernels = rng.standard_normal((3, 2, nk, nk)) * 0.3
        beta = betas[case % len(betas)]
        Z, _ = spec_conv_forward(x, SpecConvLayer(kernels, Beta(beta)))
        for z in Z:
            dense = densify(z).data
            worst_sym = max(worst_sym, hermitian_residual(dense))
            worst_imag = max(worst_imag, float(np.max(np.abs(ifft2(dense).imag))))
            if not check_hermitian(densify(z), HERMITIAN_TOLERANCE):
                logger.warning(f"symmetry case {case} beta={beta}: residual {hermitian_residual(dense):.3e}")
            to_spatial(z)
        count += 1
    passed = worst_sym <= HERMITIAN_TOLERANCE and worst_imag <= IMAG_TOLERANCE
    return SuiteResult("symmetry", passed, count, max(worst_sym, worst_imag),
                       f"hermitian {worst_sym:.2e}, imaginary {worst_imag:.2e}")


def pick_beta(model: SpecNetModel, batch: np.ndarray, candidates: Sequence[float] = GRADIENT_BETAS) -> Optional[float]:
    for beta in candidates:
        if beta_margin(model, batch, beta) > BETA_MARGIN:
            return beta
    return None


def gradient_suite(seed: int = 0) -> SuiteResult:
    """Finite-difference check of every parameter on the tiny models, both modes"""
    rng = _rng(seed)
    worst = 0.0
    details = []
    cases = 0
    for mode, pooled in (("spectral", False), ("spectral", True), ("spatial", False), ("spatial", True)):
        spec = tiny_model_spec(mode, 0.0, pooled)
        model = SpecNetModel.initialize(spec, seed)
        batch = 0.5 * rng.standard_normal((2,) + spec.input_shape)
        labels = [int(v) for v in rng.integers(0, spec.num_classes, size=2)]
        if mode == "spectral":
            beta = pick_beta(model, batch)
            if beta is None:
                details.append(f"{mode}{'+pool' if pooled else ''}: no beta with margin")
                continue
            model = model.with_mode(mode, beta)
        errors = check_model_gradients(model, batch, labels)
        case_worst = max(errors.values())
        worst = max(worst, case_worst)
        details.append(f"{mode}{'+pool' if pooled else ''} beta={model.spec.beta}: {case_worst:.2e}")
        cases += 1
    return SuiteResult("gradient", cases > 0 and worst <= GRADIENT_TOLERANCE, cases, worst, "; ".join(details))


SUITES = {
    "fft": fft_suite,
    "conv": conv_suite,
    "gradient": gradient_suite,
    "symmetry": symmetry_suite,
}


def run_selftest(seed: int = 0, suites: Optional[Sequence[str]] = None) -> List[SuiteResult]:
    results = []
    for name in suites or SUITES:
        try:
            result = SUITES[name](seed)
        except NumericIntegrityError as e:
            result = SuiteResult(name, False, 0, float("inf"), str(e))
        status = "PASS" if result.passed else "FAIL"
        logger.info(f"[{status}] {name}: {result.cases} cases, max error {result.max_error:.3e} {result.detail}")
        results.append(result)
    return results
