import math

import numpy as np
import numpy.testing as npt
import pytest

from specnet.datasets import synthetic_shapes
from specnet.errors import NumericIntegrityError, ShapeError, UsageError
from specnet.fft import fft2, ifft2
from specnet.memory_profiler import MemLedger, dense_bytes
from specnet.network import (
    DenseLayer, LayerSpec, ModelSpec, SpecNetModel, build_spec_lenet_mini, calibrate_beta_scales, dense_backward,
    dense_forward, lenet_mini_spec, model_backward, model_forward, softmax_xent, spatial_conv_reference, to_spatial,
)
from specnet.selftest import check_model_gradients, gradient_suite, numeric_gradient, pick_beta, tiny_model_spec
from specnet.spectral_block import SpecConvLayer, spec_conv_forward
from specnet.tensors import Beta, DenseReal, SparseSpectralMap, nnz_fraction, sparse_from_array


def test_reference_conv_identity_kernel(rng):
    x = DenseReal(rng.standard_normal((3, 4)))
    npt.assert_array_equal(spatial_conv_reference(x, DenseReal([[1.0]])).data, x.data)


def test_reference_conv_hand_example():
    y = spatial_conv_reference(DenseReal([[1, 2], [3, 4]]), DenseReal([[1, 0], [0, 1]]))
    npt.assert_array_equal(y.data, [[1, 2, 0], [3, 5, 2], [0, 3, 4]])


def test_to_spatial_empty_map():
    npt.assert_array_equal(to_spatial(SparseSpectralMap.empty(4, 4)).data, np.zeros((4, 4)))


def test_to_spatial_rejects_non_hermitian():
    with pytest.raises(NumericIntegrityError):
        to_spatial(SparseSpectralMap.from_entries(4, 4, [(0, 1, 1.0 + 0j)]))


def test_to_spatial_matches_reference_pipeline(rng):
    x = rng.standard_normal((5, 4))
    k = rng.standard_normal((3, 3))
    Z, _ = spec_conv_forward(DenseReal(x), SpecConvLayer(k, Beta(0.0)))
    Y = fft2(spatial_conv_reference(DenseReal(x), DenseReal(k)).data)
    expected = ifft2(np.tanh(Y.real) + 1j * np.tanh(Y.imag)).real
    npt.assert_allclose(to_spatial(Z[0]).data, expected, atol=1e-8)


def test_dense_forward_examples():
    x = np.array([2.0, 3.0])
    npt.assert_array_equal(dense_forward(x, DenseLayer(np.eye(2), np.zeros(2))), x)
    npt.assert_array_equal(dense_forward(x, DenseLayer([[1.0, 1.0]], [0.5])), [5.5])
    with pytest.raises(ShapeError):
        dense_forward(np.ones(3), DenseLayer(np.eye(2), np.zeros(2)))


def test_dense_backward_matches_finite_differences(rng):
    x = rng.standard_normal(4)
    W = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)

    def loss():
        return float(np.sum(dense_forward(x, DenseLayer(W, b)) ** 2) / 2)

    out = dense_forward(x, DenseLayer(W, b))
    grad_x, grad_W, grad_b = dense_backward(x, DenseLayer(W, b), out)
    npt.assert_allclose(grad_W, numeric_gradient(loss, W), atol=1e-6)
    npt.assert_allclose(grad_b, numeric_gradient(loss, b), atol=1e-6)
    npt.assert_allclose(grad_x, numeric_gradient(loss, x), atol=1e-6)


def test_softmax_xent_examples(rng):
    loss, grad = softmax_xent(np.zeros(5), 2)
    assert loss == pytest.approx(math.log(5))
    npt.assert_allclose(grad.sum(), 0.0, atol=1e-15)

    loss, grad = softmax_xent(np.array([1000.0, 0.0]), 0)
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))

    logits = rng.standard_normal(4)
    _, grad = softmax_xent(logits, 1)
    npt.assert_allclose(grad, numeric_gradient(lambda: softmax_xent(logits, 1)[0], logits), atol=1e-6)


def test_lenet_mini_shapes():
    resolved = lenet_mini_spec((1, 12, 12), 2).resolve()
    shapes = [r.out_shape for r in resolved]
    assert shapes == [(8, 14, 14), (8, 7, 7), (16, 7, 7), (16, 7, 7), (784,), (2,)]
    assert resolved[2].chained and not resolved[0].chained


def test_lenet_mini_mnist_parameter_shapes():
    shapes = lenet_mini_spec((1, 28, 28), 10).param_shapes()
    assert shapes == {
        "layer0.kernels": (8, 1, 3, 3),
        "layer2.kernels": (16, 8, 3, 3),
        "layer5.weights": (10, 16 * 15 * 15),
        "layer5.bias": (10,),
    }


@pytest.mark.parametrize("layers", [
    # two transitions
    [LayerSpec("spec-conv", 2, 3), LayerSpec("to-spatial"), LayerSpec("spec-conv", 2, 3), LayerSpec("to-spatial"),
     LayerSpec("flatten"), LayerSpec("dense", out_features=3)],
    # no transition
    [LayerSpec("spec-conv", 2, 3), LayerSpec("flatten"), LayerSpec("dense", out_features=3)],
    # wrong head size
    [LayerSpec("spec-conv", 2, 3), LayerSpec("to-spatial"), LayerSpec("flatten"), LayerSpec("dense", out_features=4)],
    # dense before flatten
    [LayerSpec("spec-conv", 2, 3), LayerSpec("to-spatial"), LayerSpec("dense", out_features=3)],
    # pooled map smaller than the next kernel
    [LayerSpec("spec-conv", 2, 3), LayerSpec("spectral-pool", target_rows=2, target_cols=2),
     LayerSpec("spec-conv", 2, 3), LayerSpec("to-spatial"), LayerSpec("flatten"), LayerSpec("dense", out_features=3)],
    # pooling a spatial map
    [LayerSpec("spectral-pool"), LayerSpec("flatten"), LayerSpec("dense", out_features=3)],
    [LayerSpec("softmax")],
])
def test_bad_layer_chains_fail_at_build_time(layers):
    with pytest.raises(ShapeError):
        SpecNetModel.initialize(ModelSpec((1, 6, 6), 3, layers), 0)


def test_model_spec_rejects_bad_mode_and_beta():
    with pytest.raises(UsageError):
        ModelSpec((1, 6, 6), 3, [], mode="wavelet")
    with pytest.raises(UsageError):
        ModelSpec((1, 6, 6), 3, [], beta=-1.0)


def test_model_spec_round_trips_through_dict():
    spec = lenet_mini_spec((3, 32, 32), 10, mode="spatial", beta=0.75, activation="softsign")
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_initialization_bounds():
    model = SpecNetModel.initialize(lenet_mini_spec((1, 12, 12), 2), seed=7)
    bound = math.sqrt(6 / (1 * 9 + 8 * 9))
    assert np.max(np.abs(model.params["layer0.kernels"])) <= bound
    npt.assert_array_equal(model.params["layer5.bias"], np.zeros(2))
    again = SpecNetModel.initialize(lenet_mini_spec((1, 12, 12), 2), seed=7)
    for name in model.params:
        npt.assert_array_equal(model.params[name], again.params[name])


def test_forward_matches_hand_chained_layers(rng):
    spec = tiny_model_spec("spectral", 0.3)
    model = SpecNetModel.initialize(spec, seed=2)
    x = rng.standard_normal((1, 6, 6))
    logits, _, _ = model_forward(model, x[None])

    Z, _ = spec_conv_forward(x, SpecConvLayer(model.params["layer0.kernels"], Beta(0.3)))
    spatial = np.stack([to_spatial(z).data for z in Z])
    expected = dense_forward(spatial.reshape(-1), DenseLayer(model.params["layer3.weights"], model.params["layer3.bias"]))
    npt.assert_allclose(logits[0], expected, atol=1e-12)


@pytest.mark.parametrize("builder", [
    lambda mode: tiny_model_spec(mode, 0.0),
    lambda mode: tiny_model_spec(mode, 0.0, pooled=True),
    lambda mode: lenet_mini_spec((1, 12, 12), 2, mode, 0.0),
])
def test_spectral_and_spatial_agree_at_zero_beta(rng, builder):
    spectral = SpecNetModel.initialize(builder("spectral"), seed=4)
    spatial = spectral.with_mode("spatial")
    batch = rng.standard_normal((3,) + spectral.spec.input_shape)
    a, _, _ = model_forward(spectral, batch)
    b, _, _ = model_forward(spatial, batch)
    npt.assert_allclose(a, b, atol=1e-6)


def test_zero_model_gives_uniform_loss():
    spec = lenet_mini_spec((1, 12, 12), 4)
    model = SpecNetModel(spec, {name: np.zeros(shape) for name, shape in spec.param_shapes().items()})
    logits, _, _ = model_forward(model, np.zeros((2, 1, 12, 12)))
    npt.assert_array_equal(logits, np.zeros((2, 4)))
    assert softmax_xent(logits[0], 1)[0] == pytest.approx(math.log(4))


def test_exactly_one_transition_per_pass(rng):
    model = build_spec_lenet_mini((1, 12, 12), 2, beta=0.5, seed=1)
    _, caches, _ = model_forward(model, rng.standard_normal((2, 1, 12, 12)))
    for sample in caches:
        assert [c.kind for c in sample].count("to-spatial") == 1


def test_forward_records_one_event_per_feature_map(rng):
    model = build_spec_lenet_mini((1, 12, 12), 2, mode="spatial", seed=1)
    ledger = MemLedger()
    _, _, events = model_forward(model, rng.standard_normal((3, 1, 12, 12)), ledger)
    assert [e.layer for e in events] == [0, 1, 2, 3]
    assert [e.bytes for e in events] == [
        3 * dense_bytes(14, 14, 8), 3 * dense_bytes(7, 7, 8), 3 * dense_bytes(7, 7, 16), 3 * dense_bytes(7, 7, 16),
    ]
    assert len(ledger) == 4
    assert ledger.peak_bytes == sum(e.bytes for e in events)


def test_forward_rejects_wrong_input_shape():
    model = build_spec_lenet_mini((1, 12, 12), 2)
    with pytest.raises(ShapeError):
        model_forward(model, np.zeros((1, 1, 10, 12)))
    with pytest.raises(UsageError):
        model_forward(model, np.zeros((1, 1, 12, 12)), precision="f16")


def test_backward_rejects_wrong_gradient_shape(rng):
    model = build_spec_lenet_mini((1, 12, 12), 2)
    _, caches, _ = model_forward(model, rng.standard_normal((2, 1, 12, 12)))
    with pytest.raises(ShapeError):
        model_backward(model, caches, np.zeros((3, 2)))


@pytest.mark.parametrize("mode", ["spectral", "spatial"])
@pytest.mark.parametrize("pooled", [False, True])
def test_model_gradients_match_finite_differences(rng, mode, pooled):
    model = SpecNetModel.initialize(tiny_model_spec(mode, 0.0, pooled), seed=3)
    batch = 0.5 * rng.standard_normal((2,) + model.spec.input_shape)
    labels = [0, 2]
    if mode == "spectral":
        beta = pick_beta(model, batch)
        if beta is None:
            pytest.skip("no beta clear of the spectral magnitudes")
        model = model.with_mode(mode, beta)
    errors = check_model_gradients(model, batch, labels)
    assert max(errors.values()) <= 1e-4, errors


def test_gradient_suite_passes():
    result = gradient_suite(seed=0)
    assert result.passed, result.detail


def test_backward_covers_every_parameter(rng):
    model = build_spec_lenet_mini((1, 12, 12), 2, beta=3.0, seed=5)
    batch = rng.standard_normal((1, 1, 12, 12))
    logits, caches, _ = model_forward(model, batch)
    grads = model_backward(model, caches, np.ones_like(logits))
    assert set(grads) == set(model.params)
    for name, value in grads.items():
        assert value.shape == model.params[name].shape
        assert np.all(np.isfinite(value))


def test_sparse_from_array_mask():
    a = np.array([[1.0, 2.0], [0.0, 3.0]])
    mask = np.array([[True, False], [True, True]])
    assert sparse_from_array(a, mask).entries == [(0, 0, 1 + 0j), (1, 1, 3 + 0j)]


def _block_fractions(model, images):
    _, caches, _ = model_forward(model, images)
    return {
        c_index: np.mean([nnz_fraction(y) for sample in caches for y in sample[c_index].data["block"].yhat])
        for c_index in (0, 2)
    }


def test_calibrated_blocks_keep_entries_at_beta_one():
    images = synthetic_shapes(16).images
    model = build_spec_lenet_mini((1, 12, 12), 2, beta=1.0, seed=0, calibration=images)
    fractions = _block_fractions(model, images)
    assert 0.0 < fractions[0] <= 0.2
    assert 0.0 < fractions[2] <= 0.2
    assert all(model.spec.layers[i].beta_scale > 0 for i in (0, 2))


def test_calibrated_chained_block_passes_gradient_to_kernels():
    data = synthetic_shapes(8)
    model = build_spec_lenet_mini((1, 12, 12), 2, beta=1.0, seed=0, calibration=data.images)
    logits, caches, _ = model_forward(model, data.images)
    grads = model_backward(model, caches, logits - logits.mean(axis=1, keepdims=True))
    assert np.any(grads["layer2.kernels"] != 0)
    assert np.any(grads["layer0.kernels"] != 0)


def test_calibrated_density_non_increasing_in_beta():
    images = synthetic_shapes(12).images
    model = build_spec_lenet_mini((1, 12, 12), 2, seed=3, calibration=images)
    first = [_block_fractions(model.with_mode("spectral", beta), images)[0] for beta in (0.5, 1.0, 1.5)]
    assert first == sorted(first, reverse=True)


def test_calibration_keeps_zero_beta_equivalence(rng):
    spectral = build_spec_lenet_mini((1, 12, 12), 2, beta=0.0, seed=4, calibration=synthetic_shapes(6).images)
    batch = rng.standard_normal((2, 1, 12, 12))
    a, _, _ = model_forward(spectral, batch)
    b, _, _ = model_forward(spectral.with_mode("spatial"), batch)
    npt.assert_allclose(a, b, atol=1e-6)


def test_calibration_leaves_weights_mode_and_explicit_beta():
    spec = lenet_mini_spec((1, 12, 12), 2, mode="spatial", beta=0.75)
    spec.layers[2].beta = 0.3
    model = SpecNetModel.initialize(spec, seed=2)
    calibrated = calibrate_beta_scales(model, synthetic_shapes(4).images)
    assert (calibrated.mode, calibrated.spec.beta) == ("spatial", 0.75)
    assert calibrated.spec.layers[2].beta_scale == 1.0
    assert calibrated.spec.layer_beta(calibrated.spec.layers[2]).value == 0.3
    scale = calibrated.spec.layers[0].beta_scale
    assert calibrated.spec.layer_beta(calibrated.spec.layers[0]).value == pytest.approx(0.75 * scale)
    for name in model.params:
        npt.assert_array_equal(calibrated.params[name], model.params[name])
    assert ModelSpec.from_dict(calibrated.spec.to_dict()) == calibrated.spec
    assert calibrated.with_mode("spectral", 1.5).spec.layers[0].beta_scale == scale


def test_calibration_rejects_bad_arguments():
    model = build_spec_lenet_mini((1, 12, 12), 2)
    with pytest.raises(UsageError):
        calibrate_beta_scales(model, np.zeros((2, 1, 12, 12)), keep=0.0)
    with pytest.raises(UsageError):
        calibrate_beta_scales(model, np.zeros((0, 1, 12, 12)))
    spec = lenet_mini_spec((1, 12, 12), 2)
    spec.layers[0].beta_scale = -1.0
    with pytest.raises(UsageError):
        spec.resolve()
