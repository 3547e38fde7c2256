"""NumPy reference implementation of the hot kernels.

Selected at import time by :mod:`cslr.kernels` when the compiled core is
unavailable (or when ``CSLR_KERNELS=numpy`` is set). Both backends must
agree to near machine precision; the test suite compares them directly.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlate x (N,Cin,H,W) with w (Cout,Cin,kh,kw)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    y = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
            y += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j], optimize=True)
    return y


def conv2d_backward(
    g: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input and weight."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride]
            gw[:, :, i, j] = np.einsum("nchw,nohw->oc", patch, g, optimize=True)
            gxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += np.einsum(
                "nohw,oc->nchw", g, w[:, :, i, j], optimize=True
            )
    gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
    return gx, gw


def dwconv1d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Depthwise temporal conv of x (T,d) with per-channel taps w (d,k), zero pad."""
    t, d = x.shape
    k = w.shape[1]
    half = k // 2
    xp = np.pad(x, ((half, half), (0, 0)))
    y = np.zeros((t, d), dtype=np.float64)
    for j in range(k):
        y += xp[j : j + t] * w[:, j]
    return y


def dwconv1d_backward(
    g: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    t, d = x.shape
    k = w.shape[1]
    half = k // 2
    xp = np.pad(x, ((half, half), (0, 0)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for j in range(k):
        gw[:, j] = np.sum(xp[j : j + t] * g, axis=0)
        gxp[j : j + t] += g * w[:, j]
    return gxp[half : half + t], gw


def ctc_loss_grad(lp: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """CTC negative log-likelihood and its gradient w.r.t. the log-probs.

    lp is a (T, K) table of per-frame log-probabilities with blank at
    column 0; labels is a 1-D int array of non-blank ids. Returns
    (loss, dloss/dlp). An infeasible label/length combination yields
    (+inf, zeros) rather than raising.
    """
    t_len, _ = lp.shape
    n = len(labels)
    ext = np.zeros(2 * n + 1, dtype=np.int64)
    ext[1::2] = labels
    s = len(ext)

    # skip transition s-2 -> s allowed only for non-blank states that do not
    # repeat the previous non-blank label
    skip_ok = np.zeros(s, dtype=bool)
    for i in range(2, s):
        skip_ok[i] = ext[i] != 0 and ext[i] != ext[i - 2]

    alpha = np.full((t_len, s), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if s > 1:
        alpha[0, 1] = lp[0, ext[1]]
    step = np.empty(s)
    skip = np.empty(s)
    for t in range(1, t_len):
        prev = alpha[t - 1]
        step[0] = NEG_INF
        step[1:] = prev[:-1]
        acc = np.logaddexp(prev, step)
        skip[:2] = NEG_INF
        skip[2:] = prev[:-2]
        acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + lp[t, ext]

    logp = alpha[t_len - 1, s - 1]
    if s > 1:
        logp = np.logaddexp(logp, alpha[t_len - 1, s - 2])
    if not np.isfinite(logp):
        return np.inf, np.zeros_like(lp)

    beta = np.full((t_len, s), NEG_INF)
    beta[t_len - 1, s - 1] = lp[t_len - 1, ext[s - 1]]
    if s > 1:
        beta[t_len - 1, s - 2] = lp[t_len - 1, ext[s - 2]]
    skip_fwd = np.zeros(s, dtype=bool)
    skip_fwd[: s - 2] = skip_ok[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        step[-1] = NEG_INF
        step[:-1] = nxt[1:]
        acc = np.logaddexp(nxt, step)
        skip[-2:] = NEG_INF
        skip[: s - 2] = nxt[2:]
        acc = np.where(skip_fwd, np.logaddexp(acc, skip), acc)
        beta[t] = acc + lp[t, ext]

    # alpha and beta both include the frame-t emission, so subtract it once
    grad = np.zeros_like(lp)
    post = np.exp(alpha + beta - lp[:, ext] - logp)
    for i in range(s):
        grad[:, ext[i]] -= post[:, i]
    return float(-logp), grad
