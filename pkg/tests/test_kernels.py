"""Kernel backends against naive loop oracles and against each other."""

import numpy as np
import pytest

from difl import kernels
from difl.kernels import pykernels

BACKENDS = [("numpy", pykernels)]
if kernels.BACKEND == "cython":
    from difl.kernels import _cykernels
    BACKENDS.append(("cython", _cykernels))


def conv2d_oracle(x, k, stride):
    """Quadruple-loop cross-correlation, written independently of the
    production kernels."""
    b, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    for ib in range(b):
        for oc in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = x[ib, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[ib, oc, i, j] = np.sum(patch * k[oc])
    return out


def maxpool2_oracle(x):
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.zeros((b, c, ho, wo))
    for ib in range(b):
        for ic in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[ib, ic, i, j] = x[ib, ic, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


@pytest.mark.parametrize("name,impl", BACKENDS)
@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_forward_matches_oracle(name, impl, stride):
    rng = np.random.default_rng(17 + stride)
    x = rng.normal(size=(3, 2, 9, 11))
    k = rng.normal(size=(4, 2, 3, 2))
    got = impl.conv2d_forward(x, k, stride)
    want = conv2d_oracle(x, k, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_conv_output_extent(name, impl):
    # floor((in - k) / stride) + 1 on an uneven case: (10 - 3) // 2 + 1 = 4
    x = np.zeros((1, 1, 10, 10))
    k = np.zeros((1, 1, 3, 3))
    assert impl.conv2d_forward(x, k, 2).shape == (1, 1, 4, 4)


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_conv_is_cross_correlation(name, impl):
    # an asymmetric kernel distinguishes correlation from true convolution
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 0, 0] = 1.0
    k = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    out = impl.conv2d_forward(x, k, 1)
    assert out.shape == (1, 1, 1, 1)
    # correlation picks k[0, 0]; a flipped-kernel convolution would pick k[2, 2]
    assert out[0, 0, 0, 0] == k[0, 0, 0, 0]


@pytest.mark.parametrize("name,impl", BACKENDS)
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_matches_finite_differences(name, impl, stride):
    rng = np.random.default_rng(5 + stride)
    x = rng.normal(size=(2, 2, 6, 7))
    k = rng.normal(size=(3, 2, 3, 3))
    gout = rng.normal(size=impl.conv2d_forward(x, k, stride).shape)

    def loss(xv, kv):
        return np.sum(impl.conv2d_forward(xv, kv, stride) * gout)

    gx, gk = impl.conv2d_backward(x, k, stride, gout)
    h = 1e-6
    for arr, grad in ((x, gx), (k, gk)):
        flat = arr.reshape(-1)
        idxs = np.random.default_rng(0).choice(flat.size, size=25, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss(x, k)
            flat[i] = orig - h
            fm = loss(x, k)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            assert abs(grad.reshape(-1)[i] - num) / max(1.0, abs(num)) < 1e-6


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_conv_backward_can_skip_input_gradient(name, impl):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 1, 5, 5))
    k = rng.normal(size=(2, 1, 3, 3))
    gout = rng.normal(size=(1, 2, 3, 3))
    gx, gk = impl.conv2d_backward(x, k, 1, gout, need_gx=False)
    assert gx is None
    _, gk_full = impl.conv2d_backward(x, k, 1, gout, need_gx=True)
    np.testing.assert_allclose(gk, gk_full, rtol=0, atol=1e-13)


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_maxpool_forward_matches_oracle(name, impl):
    rng = np.random.default_rng(23)
    x = rng.normal(size=(2, 3, 7, 9))  # odd extents: trailing row/col dropped
    out, sw = impl.maxpool2_forward(x)
    assert out.shape == (2, 3, 3, 4)
    np.testing.assert_array_equal(out, maxpool2_oracle(x))
    assert sw.dtype == np.int8
    assert sw.min() >= 0 and sw.max() <= 3


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_maxpool_tie_goes_to_first_in_scan_order(name, impl):
    x = np.full((1, 1, 2, 2), 1.5)
    out, sw = impl.maxpool2_forward(x)
    assert out[0, 0, 0, 0] == 1.5
    assert sw[0, 0, 0, 0] == 0
    gx = impl.maxpool2_backward((1, 1, 2, 2), sw, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(gx[0, 0], [[1.0, 0.0], [0.0, 0.0]])


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_maxpool_backward_routes_to_argmax(name, impl):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 2, 6, 6))
    out, sw = impl.maxpool2_forward(x)
    gout = rng.normal(size=out.shape)
    gx = impl.maxpool2_backward(x.shape, sw, gout)
    # each window's gradient lands on its max element and nowhere else
    assert gx.shape == x.shape
    np.testing.assert_allclose(
        gx.reshape(2, 2, 3, 2, 3, 2).sum(axis=(3, 5)), gout, rtol=0, atol=0)
    assert np.count_nonzero(gx) == gout.size


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled backend not built")
def test_backends_agree():
    rng = np.random.default_rng(37)
    from difl.kernels import _cykernels
    for stride in (1, 2):
        x = rng.normal(size=(2, 3, 10, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        a = _cykernels.conv2d_forward(x, k, stride)
        b = pykernels.conv2d_forward(x, k, stride)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        gout = rng.normal(size=a.shape)
        gxa, gka = _cykernels.conv2d_backward(x, k, stride, gout)
        gxb, gkb = pykernels.conv2d_backward(x, k, stride, gout)
        np.testing.assert_allclose(gxa, gxb, rtol=0, atol=1e-12)
        np.testing.assert_allclose(gka, gkb, rtol=0, atol=1e-12)
        pa, sa = _cykernels.maxpool2_forward(x)
        pb, sb = pykernels.maxpool2_forward(x)
        np.testing.assert_array_equal(pa, pb)
        np.testing.assert_array_equal(sa, sb)


@pytest.mark.parametrize("name,impl", BACKENDS)
def test_kernels_are_deterministic(name, impl):
    rng = np.random.default_rng(41)
    x = rng.normal(size=(2, 2, 8, 8))
    k = rng.normal(size=(3, 2, 3, 3))
    a = impl.conv2d_forward(x, k, 1)
    b = impl.conv2d_forward(x.copy(), k.copy(), 1)
    assert a.tobytes() == b.tobytes()
