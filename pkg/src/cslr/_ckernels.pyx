# cython: language_level=3
"""Compiled kernel core: conv2d, depthwise conv1d, and the CTC recursion.

Mirrors cslr._npkernels exactly; the dispatcher in cslr.kernels picks this
module when it imported successfully.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double logaddexp2(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline int imax(int a, int b) nogil:
    return a if a > b else b


cdef inline int imin(int a, int b) nogil:
    return a if a < b else b


def conv2d_forward(cnp.ndarray[double, ndim=4] x, cnp.ndarray[double, ndim=4] w,
                   int stride, int pad):
    cdef int n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (wd + 2 * pad - kw) // stride + 1
    # channels-last so the inner reduction runs over contiguous memory
    cdef cnp.ndarray[double, ndim=4] xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    cdef cnp.ndarray[double, ndim=4] wt = np.ascontiguousarray(w.transpose(0, 2, 3, 1))
    cdef cnp.ndarray[double, ndim=4] y = np.zeros((n, cout, ho, wo), dtype=np.float64)
    cdef double[:, :, :, :] xv = xt
    cdef double[:, :, :, :] wv = wt
    cdef double[:, :, :, :] yv = y
    cdef int b, o, c, i, j, p, q, ih, iw, ilo, ihi, jlo, jhi
    cdef double acc
    with nogil:
        for b in range(n):
            for o in range(cout):
                for p in range(ho):
                    ilo = imax(0, pad - p * stride)
                    ihi = imin(kh - 1, h - 1 - p * stride + pad)
                    for q in range(wo):
                        jlo = imax(0, pad - q * stride)
                        jhi = imin(kw - 1, wd - 1 - q * stride + pad)
                        acc = 0.0
                        for i in range(ilo, ihi + 1):
                            ih = p * stride + i - pad
                            for j in range(jlo, jhi + 1):
                                iw = q * stride + j - pad
                                for c in range(cin):
                                    acc += xv[b, ih, iw, c] * wv[o, i, j, c]
                        yv[b, o, p, q] = acc
    return y


def conv2d_backward(cnp.ndarray[double, ndim=4] g, cnp.ndarray[double, ndim=4] x,
                    cnp.ndarray[double, ndim=4] w, int stride, int pad):
    cdef int n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = g.shape[2], wo = g.shape[3]
    cdef cnp.ndarray[double, ndim=4] xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    cdef cnp.ndarray[double, ndim=4] wt = np.ascontiguousarray(w.transpose(0, 2, 3, 1))
    cdef cnp.ndarray[double, ndim=4] gxt = np.zeros_like(xt)
    cdef cnp.ndarray[double, ndim=4] gwt = np.zeros_like(wt)
    cdef double[:, :, :, :] xv = xt
    cdef double[:, :, :, :] wv = wt
    cdef double[:, :, :, :] gv = g
    cdef double[:, :, :, :] gxv = gxt
    cdef double[:, :, :, :] gwv = gwt
    cdef int b, o, c, i, j, p, q, ih, iw, ilo, ihi, jlo, jhi
    cdef double go
    with nogil:
        for b in range(n):
            for o in range(cout):
                for p in range(ho):
                    ilo = imax(0, pad - p * stride)
                    ihi = imin(kh - 1, h - 1 - p * stride + pad)
                    for q in range(wo):
                        go = gv[b, o, p, q]
                        if go == 0.0:
                            continue
                        jlo = imax(0, pad - q * stride)
                        jhi = imin(kw - 1, wd - 1 - q * stride + pad)
                        for i in range(ilo, ihi + 1):
                            ih = p * stride + i - pad
                            for j in range(jlo, jhi + 1):
                                iw = q * stride + j - pad
                                for c in range(cin):
                                    gxv[b, ih, iw, c] += go * wv[o, i, j, c]
                                    gwv[o, i, j, c] += go * xv[b, ih, iw, c]
    return gxt.transpose(0, 3, 1, 2).copy(), gwt.transpose(0, 3, 1, 2).copy()


def dwconv1d_forward(cnp.ndarray[double, ndim=2] x, cnp.ndarray[double, ndim=2] w):
    cdef int t = x.shape[0], d = x.shape[1], k = w.shape[1]
    cdef int half = k // 2
    cdef cnp.ndarray[double, ndim=2] y = np.zeros((t, d), dtype=np.float64)
    cdef double[:, :] xv = x
    cdef double[:, :] wv = w
    cdef double[:, :] yv = y
    cdef int i, c, j, ti
    cdef double acc
    with nogil:
        for i in range(t):
            for c in range(d):
                acc = 0.0
                for j in range(k):
                    ti = i + j - half
                    if ti < 0 or ti >= t:
                        continue
                    acc += xv[ti, c] * wv[c, j]
                yv[i, c] = acc
    return y


def dwconv1d_backward(cnp.ndarray[double, ndim=2] g, cnp.ndarray[double, ndim=2] x,
                      cnp.ndarray[double, ndim=2] w):
    cdef int t = x.shape[0], d = x.shape[1], k = w.shape[1]
    cdef int half = k // 2
    cdef cnp.ndarray[double, ndim=2] gx = np.zeros_like(x)
    cdef cnp.ndarray[double, ndim=2] gw = np.zeros_like(w)
    cdef double[:, :] xv = x
    cdef double[:, :] wv = w
    cdef double[:, :] gv = g
    cdef double[:, :] gxv = gx
    cdef double[:, :] gwv = gw
    cdef int i, c, j, ti
    with nogil:
        for i in range(t):
            for c in range(d):
                for j in range(k):
                    ti = i + j - half
                    if ti < 0 or ti >= t:
                        continue
                    gxv[ti, c] += gv[i, c] * wv[c, j]
                    gwv[c, j] += gv[i, c] * xv[ti, c]
    return gx, gw


def ctc_loss_grad(cnp.ndarray[double, ndim=2] lp, labels):
    cdef cnp.ndarray[long, ndim=1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef int t_len = lp.shape[0]
    cdef int n = lab.shape[0]
    cdef int s = 2 * n + 1
    cdef cnp.ndarray[long, ndim=1] ext = np.zeros(s, dtype=np.int64)
    cdef int i, t
    for i in range(n):
        ext[2 * i + 1] = lab[i]

    cdef cnp.ndarray[double, ndim=2] alpha = np.full((t_len, s), -INFINITY)
    cdef cnp.ndarray[double, ndim=2] beta = np.full((t_len, s), -INFINITY)
    cdef cnp.ndarray[double, ndim=2] grad = np.zeros_like(lp)
    cdef double[:, :] lpv = lp
    cdef double[:, :] av = alpha
    cdef double[:, :] bv = beta
    cdef double[:, :] gv = grad
    cdef long[:] ev = ext
    cdef double acc, logp
    with nogil:
        av[0, 0] = lpv[0, ev[0]]
        if s > 1:
            av[0, 1] = lpv[0, ev[1]]
        for t in range(1, t_len):
            for i in range(s):
                acc = av[t - 1, i]
                if i >= 1:
                    acc = logaddexp2(acc, av[t - 1, i - 1])
                if i >= 2 and ev[i] != 0 and ev[i] != ev[i - 2]:
                    acc = logaddexp2(acc, av[t - 1, i - 2])
                av[t, i] = acc + lpv[t, ev[i]]
        logp = av[t_len - 1, s - 1]
        if s > 1:
            logp = logaddexp2(logp, av[t_len - 1, s - 2])
    if not np.isfinite(logp):
        return np.inf, grad
    with nogil:
        bv[t_len - 1, s - 1] = lpv[t_len - 1, ev[s - 1]]
        if s > 1:
            bv[t_len - 1, s - 2] = lpv[t_len - 1, ev[s - 2]]
        for t in range(t_len - 2, -1, -1):
            for i in range(s):
                acc = bv[t + 1, i]
                if i + 1 < s:
                    acc = logaddexp2(acc, bv[t + 1, i + 1])
                if i + 2 < s and ev[i + 2] != 0 and ev[i + 2] != ev[i]:
                    acc = logaddexp2(acc, bv[t + 1, i + 2])
                bv[t, i] = acc + lpv[t, ev[i]]
        # alpha and beta both include the frame-t emission; subtract it once
        for t in range(t_len):
            for i in range(s):
                gv[t, ev[i]] -= exp(av[t, i] + bv[t, i] - lpv[t, ev[i]] - logp)
    return -logp, grad
