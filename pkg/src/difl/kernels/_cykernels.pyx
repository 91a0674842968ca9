# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution / pooling kernels.

Same contract as pykernels (see that module for the conventions). Loops are
arranged so the innermost index walks contiguous memory; everything is
single-threaded on purpose so results stay bit-reproducible.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(x, k, stride):
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    cdef Py_ssize_t s = stride
    cdef Py_ssize_t b = x.shape[0], cin = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t cout = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = (h - kh) // s + 1
    cdef Py_ssize_t wo = (w - kw) // s + 1
    out = np.zeros((b, cout, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] xv = x, kv = k, ov = out
    cdef Py_ssize_t ib, oc, ic, u, v, i, j
    cdef double wgt
    with nogil:
        for ib in range(b):
            for oc in range(cout):
                for ic in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            wgt = kv[oc, ic, u, v]
                            for i in range(ho):
                                for j in range(wo):
                                    ov[ib, oc, i, j] += wgt * xv[ib, ic, i * s + u, j * s + v]
    return out


def conv2d_backward(x, k, stride, gout, need_gx=True):
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    cdef Py_ssize_t s = stride
    cdef bint want_gx = bool(need_gx)
    cdef Py_ssize_t b = x.shape[0], cin = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t cout = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gk = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    gx = np.zeros((b, cin, h, w), dtype=np.float64) if want_gx else None
    cdef double[:, :, :, ::1] xv = x, kv = k, gv = gout, gkv = gk
    cdef double[:, :, :, ::1] gxv = gx if want_gx else xv  # unused when want_gx is false
    cdef Py_ssize_t ib, oc, ic, u, v, i, j
    cdef double g, wgt
    with nogil:
        for ib in range(b):
            for oc in range(cout):
                for ic in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            wgt = kv[oc, ic, u, v]
                            g = 0.0
                            if want_gx:
                                for i in range(ho):
                                    for j in range(wo):
                                        g += gv[ib, oc, i, j] * xv[ib, ic, i * s + u, j * s + v]
                                        gxv[ib, ic, i * s + u, j * s + v] += gv[ib, oc, i, j] * wgt
                            else:
                                for i in range(ho):
                                    for j in range(wo):
                                        g += gv[ib, oc, i, j] * xv[ib, ic, i * s + u, j * s + v]
                            gkv[oc, ic, u, v] += g
    return gx, gk


def maxpool2_forward(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    out = np.empty((b, c, ho, wo), dtype=np.float64)
    sw = np.empty((b, c, ho, wo), dtype=np.int8)
    cdef double[:, :, :, ::1] xv = x, ov = out
    cdef signed char[:, :, :, ::1] sv = sw
    cdef Py_ssize_t ib, ic, i, j, r, q
    cdef double best, val
    cdef signed char arg
    with nogil:
        for ib in range(b):
            for ic in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = xv[ib, ic, 2 * i, 2 * j]
                        arg = 0
                        for r in range(2):
                            for q in range(2):
                                val = xv[ib, ic, 2 * i + r, 2 * j + q]
                                if val > best:
                                    best = val
                                    arg = <signed char> (2 * r + q)
                        ov[ib, ic, i, j] = best
                        sv[ib, ic, i, j] = arg
    return out, sw


def maxpool2_backward(x_shape, switches, gout):
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    switches = np.ascontiguousarray(switches, dtype=np.int8)
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gx = np.zeros((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] gv = gout, gxv = gx
    cdef signed char[:, :, :, ::1] sv = switches
    cdef Py_ssize_t ib, ic, i, j
    cdef signed char a
    with nogil:
        for ib in range(b):
            for ic in range(c):
                for i in range(ho):
                    for j in range(wo):
                        a = sv[ib, ic, i, j]
                        gxv[ib, ic, 2 * i + (a >> 1), 2 * j + (a & 1)] += gv[ib, ic, i, j]
    return gx
