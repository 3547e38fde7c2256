"""Backend agreement: the compiled core and the NumPy fallback must match."""

import numpy as np
import pytest

from cslr import _npkernels as np_impl
from cslr import kernels

cy_impl = pytest.importorskip("cslr._ckernels", reason="compiled core not built")


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (1, 3), (3, 2)])
def test_conv2d_backends_agree(stride, pad):
    rng = np.random.default_rng((stride, pad))
    x = rng.normal(size=(3, 4, 9, 8))
    w = rng.normal(size=(5, 4, 3, 3))
    y_np = np_impl.conv2d_forward(x, w, stride, pad)
    y_cy = cy_impl.conv2d_forward(x, w, stride, pad)
    np.testing.assert_allclose(y_cy, y_np, atol=1e-12)
    g = rng.normal(size=y_np.shape)
    gx_np, gw_np = np_impl.conv2d_backward(g, x, w, stride, pad)
    gx_cy, gw_cy = cy_impl.conv2d_backward(g, x, w, stride, pad)
    np.testing.assert_allclose(gx_cy, gx_np, atol=1e-11)
    np.testing.assert_allclose(gw_cy, gw_np, atol=1e-11)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_dwconv1d_backends_agree(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(11, 6))
    w = rng.normal(size=(6, k))
    np.testing.assert_allclose(
        cy_impl.dwconv1d_forward(x, w), np_impl.dwconv1d_forward(x, w), atol=1e-12)
    g = rng.normal(size=(11, 6))
    gx_np, gw_np = np_impl.dwconv1d_backward(g, x, w)
    gx_cy, gw_cy = cy_impl.dwconv1d_backward(g, x, w)
    np.testing.assert_allclose(gx_cy, gx_np, atol=1e-12)
    np.testing.assert_allclose(gw_cy, gw_np, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_ctc_backends_agree(seed):
    rng = np.random.default_rng(seed)
    t_len = int(rng.integers(1, 9))
    vocab = int(rng.integers(1, 4))
    logits = rng.normal(size=(t_len, vocab + 1))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = int(rng.integers(0, min(t_len, 3) + 1))
    labels = rng.integers(1, vocab + 1, size=n)
    l_np, g_np = np_impl.ctc_loss_grad(lp, labels)
    l_cy, g_cy = cy_impl.ctc_loss_grad(lp, labels)
    if np.isinf(l_np):
        assert np.isinf(l_cy)
    else:
        assert l_cy == pytest.approx(l_np, abs=1e-12)
        np.testing.assert_allclose(g_cy, g_np, atol=1e-12)


def test_active_backend_exposes_api():
    assert kernels.BACKEND in ("cython", "numpy")
    for name in ("conv2d_forward", "conv2d_backward", "dwconv1d_forward",
                 "dwconv1d_backward", "ctc_loss_grad"):
        assert callable(getattr(kernels, name))
