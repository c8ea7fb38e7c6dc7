import numpy as np
import numpy.testing as npt
import pytest

from specnet.errors import DimensionError
from specnet.fft import PadSpec, dft2d_reference, fft2, fft2d, ifft2, ifft2d, pad_array, zero_pad
from specnet.selftest import fft_suite, relative_error
from specnet.tensors import DenseReal, SpectralMap, check_hermitian


def test_zero_pad():
    npt.assert_array_equal(zero_pad(DenseReal(np.ones((2, 2))), PadSpec(2, 2)).data, np.ones((2, 2)))
    npt.assert_array_equal(zero_pad(DenseReal([[5.0]]), PadSpec(3, 3)).data,
                           [[5, 0, 0], [0, 0, 0], [0, 0, 0]])
    padded = zero_pad(DenseReal(np.ones((5, 5))), PadSpec.full_convolution(5, 5, 3))
    assert padded.rows == 7


def test_zero_pad_rejects_shrinking():
    with pytest.raises(DimensionError):
        zero_pad(DenseReal(np.ones((3, 3))), PadSpec(2, 3))
    with pytest.raises(DimensionError):
        pad_array(np.ones((2, 4)), 2, 3)


def test_fft_of_zeros_and_impulse():
    npt.assert_array_equal(fft2d(DenseReal(np.zeros((4, 4)))).data, np.zeros((4, 4)))
    impulse = np.zeros((4, 4))
    impulse[0, 0] = 1.0
    npt.assert_allclose(fft2d(DenseReal(impulse)).data, np.ones((4, 4)), atol=1e-12)
    npt.assert_allclose(ifft2d(SpectralMap(np.ones((4, 4)))).data, impulse, atol=1e-12)


def test_reference_hand_example():
    npt.assert_allclose(dft2d_reference(np.array([[1.0, 2.0], [3.0, 4.0]])).data, [[10, -2], [-4, 0]], atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1), (1, 7), (2, 3), (3, 5), (7, 11), (13, 13), (16, 16), (12, 10), (17, 4),
                                   (37, 2), (9, 25)])
def test_fft_matches_reference(rng, shape):
    x = rng.standard_normal(shape)
    assert relative_error(fft2d(DenseReal(x)).data, dft2d_reference(x).data) <= 1e-10


def test_bluestein_large_prime(rng):
    # 41 and 53 are above the direct-matrix limit
    x = rng.standard_normal((41, 53))
    assert relative_error(fft2(x), dft2d_reference(x).data) <= 1e-10


def test_round_trip(rng):
    x = rng.standard_normal((6, 6))
    npt.assert_allclose(ifft2(fft2(x)).real, x, atol=1e-12)
    assert relative_error(ifft2(fft2(x)), x) <= 1e-10


def test_inverse_of_hermitian_is_real(rng):
    X = fft2(rng.standard_normal((5, 8)))
    assert np.max(np.abs(ifft2(X).imag)) <= 1e-10


def test_linearity_and_parseval(rng):
    x = rng.standard_normal((6, 9))
    y = rng.standard_normal((6, 9))
    npt.assert_allclose(fft2(2.0 * x - 3.0 * y), 2.0 * fft2(x) - 3.0 * fft2(y), atol=1e-10)
    X = fft2(x)
    npt.assert_allclose(np.sum(x ** 2), np.sum(np.abs(X) ** 2) / x.size, rtol=1e-9)


def test_real_input_is_hermitian(rng):
    for shape in [(3, 4), (5, 5), (8, 7)]:
        assert check_hermitian(fft2d(DenseReal(rng.standard_normal(shape))), 1e-9)


def test_batched_transform_matches_per_map(rng):
    stack = rng.standard_normal((3, 2, 5, 6))
    batched = fft2(stack)
    for idx in np.ndindex(3, 2):
        npt.assert_allclose(batched[idx], fft2(stack[idx]), atol=1e-12)


def test_fft_suite_passes():
    result = fft_suite(seed=3, cases=100)
    assert result.passed, result
