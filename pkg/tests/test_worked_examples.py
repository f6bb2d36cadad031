"""Small hand-computed cases for the primitives."""
import numpy as np
import pytest

from dffn import ops
from dffn.fourier import Spectrum, amplitude, dft2, phase, recompose, swap_components
from dffn.gradcheck import grad_check
from dffn.tensor import Tensor, precision


def _spec(re, im, grad=True):
    return Spectrum(Tensor(np.array(re, dtype=np.float64), requires_grad=grad),
                    Tensor(np.array(im, dtype=np.float64), requires_grad=grad))


def test_conv_all_ones_counts_neighbours():
    with precision(np.float64):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=1)
    np.testing.assert_array_equal(out.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


@pytest.mark.parametrize("x, expected", [
    (np.ones((2, 2)), [[2, 0], [0, 0]]),
    ([[1, 0], [0, 0]], [[0.5, 0.5], [0.5, 0.5]]),
    ([[0, 1], [0, 0]], [[0.5, -0.5], [0.5, -0.5]]),
])
def test_dft2_two_by_two(x, expected):
    with precision(np.float64):
        s = dft2(Tensor(np.asarray(x, dtype=np.float64)))
    np.testing.assert_allclose(s.re.data, expected, atol=1e-12)
    np.testing.assert_allclose(s.im.data, 0, atol=1e-12)


def test_amplitude_value_and_gradient():
    with precision(np.float64):
        s = _spec([3.0], [4.0])
        a = amplitude(s)
        ops.sum(a).backward()
    assert a.data[0] == pytest.approx(5.0)
    assert s.re.grad[0] == pytest.approx(0.6)
    assert s.im.grad[0] == pytest.approx(0.8)


def test_amplitude_gradient_is_zero_at_origin():
    with precision(np.float64):
        s = _spec([0.0], [0.0])
        a = amplitude(s)
        ops.sum(a).backward()
    assert a.data[0] == 0
    assert s.re.grad[0] == 0 and s.im.grad[0] == 0


@pytest.mark.parametrize("re, im, expected", [
    (1.0, 0.0, 0.0), (0.0, 1.0, np.pi / 2), (-1.0, 0.0, np.pi), (0.0, -1.0, -np.pi / 2),
    (-1.0, -0.0, np.pi),
])
def test_phase_quadrants(re, im, expected):
    with precision(np.float64):
        p = phase(_spec([re], [im], grad=False))
    assert p.data[0] == pytest.approx(expected)


def test_recompose_inverts_polar_form():
    with precision(np.float64):
        s = recompose(Tensor(np.array([5.0])), Tensor(np.array([np.arctan2(4.0, 3.0)])))
    assert s.re.data[0] == pytest.approx(3.0)
    assert s.im.data[0] == pytest.approx(4.0)


def test_zero_amplitude_gives_zero_spectrum(rng):
    with precision(np.float64):
        s = recompose(Tensor(np.zeros((4, 4))), Tensor(rng.uniform(-np.pi, np.pi, (4, 4))))
    assert not s.re.data.any() and not s.im.data.any()


def test_global_avg_pool_value_and_gradient():
    with precision(np.float64):
        x = Tensor(np.array([[[[1.0, 3.0], [5.0, 7.0]]]]), requires_grad=True)
        y = ops.global_avg_pool(x)
        ops.sum(y).backward()
    assert y.shape == (1, 1, 1, 1)
    assert y.data.item() == 4.0
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 0.25))


def test_swap_matches_complex_arithmetic(rng):
    a, b = rng.random((2, 8, 8)), rng.random((2, 8, 8))
    fa, fb = np.fft.fft2(a), np.fft.fft2(b)
    want_ab = np.fft.ifft2(np.abs(fa) * np.exp(1j * np.angle(fb))).real
    want_ba = np.fft.ifft2(np.abs(fb) * np.exp(1j * np.angle(fa))).real
    with precision(np.float64):
        ab, ba = swap_components(Tensor(a), Tensor(b))
    np.testing.assert_allclose(ab.data, want_ab, atol=1e-10)
    np.testing.assert_allclose(ba.data, want_ba, atol=1e-10)


def test_grad_check_on_sum_of_squares(rng):
    with precision(np.float64):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        err, n = grad_check(lambda: ops.sum(ops.mul(x, x)), [x])
    assert n > 0
    assert err <= 1e-6


def test_concat_shape():
    a, b = Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 4, 4)))
    assert ops.concat([a, b], axis=1).shape == (1, 5, 4, 4)


def test_resample_single_pixel_broadcasts():
    with precision(np.float64):
        out = ops.resample(Tensor(np.full((1, 1, 1, 1), 0.7)), 2, 2)
    np.testing.assert_allclose(out.data, np.full((1, 1, 2, 2), 0.7))
