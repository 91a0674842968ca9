"""Reference numpy implementation of the convolution / pooling hot path.

Convolutions are lowered to a single GEMM over an im2col view, which is what
keeps whole-experiment runtimes tolerable when the compiled backend is not
available. Shapes are assumed already validated by the caller (the autodiff
layer owns the error messages).

Conventions, shared with the compiled backend:
  - cross-correlation (no kernel flip), valid padding, explicit stride
  - output extent per axis: floor((in - k) / stride) + 1
  - pooling windows are 2x2 stride 2; an odd trailing row/column is dropped
  - pooling ties resolve to the first maximum in row-major window order
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, kh, kw, stride, ho, wo):
    # (b, cin, ho, wo, kh, kw) view, then flattened so rows are output pixels
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, cin = x.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * kh * kw)


def conv2d_forward(x, k, stride):
    b, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, ho, wo)
    out = cols @ k.reshape(cout, -1).T
    return np.ascontiguousarray(out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2))


def conv2d_backward(x, k, stride, gout, need_gx=True):
    """Returns (gx, gk); gx is None when need_gx is false."""
    b, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho, wo = gout.shape[2:]
    cols = _im2col(x, kh, kw, stride, ho, wo)
    g2 = gout.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
    gk = (g2.T @ cols).reshape(cout, cin, kh, kw)
    gx = None
    if need_gx:
        gx = np.zeros_like(x)
        for u in range(kh):
            for v in range(kw):
                # every output pixel (i, j) touched x[i*s+u, j*s+v]
                contrib = np.tensordot(gout, k[:, :, u, v], axes=([1], [0]))
                gx[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += (
                    contrib.transpose(0, 3, 1, 2))
    return gx, gk


def maxpool2_forward(x):
    """Returns (pooled, switches); switches hold the row-major window argmax."""
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    t = x[:, :, :2 * ho, :2 * wo].reshape(b, c, ho, 2, wo, 2)
    t = t.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
    sw = t.argmax(axis=4)  # argmax takes the first maximum on ties
    out = np.take_along_axis(t, sw[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(out), sw.astype(np.int8)


def maxpool2_backward(x_shape, switches, gout):
    b, c, h, w = x_shape
    ho, wo = gout.shape[2:]
    g4 = np.zeros((b, c, ho, wo, 4))
    np.put_along_axis(g4, switches[..., None].astype(np.intp), gout[..., None], axis=4)
    gx = np.zeros(x_shape)
    gx[:, :, :2 * ho, :2 * wo] = (
        g4.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo))
    return gx
