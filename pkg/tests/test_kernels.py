"""The numba and numpy kernel paths must agree exactly."""
import numpy as np
import pytest

from smelter import kernels
from smelter.kernels import numpy_impl

pytestmark = pytest.mark.skipif(kernels.numba_impl is None, reason="numba unavailable")
numba_impl = kernels.numba_impl


@pytest.mark.parametrize("shape,stride,pad", [((2, 3, 7, 5), 1, 1), ((1, 4, 8, 8), 2, 1), ((3, 2, 4, 6), 1, 0)])
def test_im2col_col2im_match(rng, shape, stride, pad):
    x = rng.standard_normal(shape)
    a = numpy_impl.im2col(x, 3, 3, stride, pad)
    b = numba_impl.im2col(x, 3, 3, stride, pad)
    np.testing.assert_array_equal(a, b)
    g = rng.standard_normal(a.shape)
    np.testing.assert_array_equal(
        numpy_impl.col2im(g, *shape, 3, 3, stride, pad),
        numba_impl.col2im(g, *shape, 3, 3, stride, pad),
    )


def test_col2im_is_adjoint_of_im2col(rng):
    # <im2col(x), g> == <x, col2im(g)>
    shape = (2, 3, 6, 5)
    x = rng.standard_normal(shape)
    cols = numpy_impl.im2col(x, 3, 3, 1, 1)
    g = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * g)
    rhs = np.sum(x * numpy_impl.col2im(g, *shape, 3, 3, 1, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_maxpool_match(rng):
    x = rng.integers(0, 4, size=(2, 3, 6, 8)).astype(np.float32)  # many ties
    ya, aa = numpy_impl.maxpool2x2(x)
    yb, ab = numba_impl.maxpool2x2(x)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(aa, ab)
    g = rng.standard_normal(ya.shape).astype(np.float32)
    np.testing.assert_array_equal(numpy_impl.maxpool2x2_backward(g, aa), numba_impl.maxpool2x2_backward(g, ab))


def test_warp_match(rng):
    src = rng.uniform(0, 255, size=(20, 17, 3))
    ang = 0.3
    m = np.array([[np.cos(ang) * 1.3, -np.sin(ang) * 1.3, 2.5], [np.sin(ang) * 1.3, np.cos(ang) * 1.3, -3.2]])
    np.testing.assert_allclose(numpy_impl.warp_bilinear(src, m, 25, 22), numba_impl.warp_bilinear(src, m, 25, 22),
                               rtol=0, atol=1e-9)


def test_convolve_rows_match(rng):
    img = rng.uniform(0, 255, size=(9, 13, 3))
    k = rng.uniform(size=7)
    np.testing.assert_allclose(numpy_impl.convolve_rows(img, k), numba_impl.convolve_rows(img, k), rtol=0, atol=1e-9)


def test_backend_selected():
    assert kernels.BACKEND_NAME in ("numba", "numpy")
