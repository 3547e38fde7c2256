"""Benchmark the compiled kernel core against the NumPy fallback.

Run as ``python -m cslr.bench``. Reports per-shape timings for both
implementations on the shapes the model actually uses, which is where
the conv-routing threshold in cslr.kernels comes from.
"""

from __future__ import annotations

import time

import numpy as np

from cslr import _npkernels as np_impl
from cslr import kernels

try:
    from cslr import _ckernels as cy_impl
except ImportError:
    cy_impl = None

# (N, Cin, H, W, Cout, k, stride, pad): the desk conv stack plus the
# 2-channel 7x7 attention conv, at a typical post-drop frame count
CONV_SHAPES = [
    (12, 3, 32, 32, 16, 3, 2, 1),
    (12, 16, 16, 16, 32, 3, 2, 1),
    (12, 32, 8, 8, 64, 3, 2, 1),
    (12, 64, 4, 4, 64, 3, 1, 1),
    (12, 2, 8, 8, 1, 7, 1, 3),
]


def _time(fn, reps: int = 30) -> float:
    fn()
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps * 1e3


def bench_conv(rng) -> None:
    print(f"{'shape (N,Cin,HxW,Cout,k,s,p)':44s} {'numpy':>22s} {'cython':>22s}")
    for n, cin, h, w, cout, k, s, p in CONV_SHAPES:
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cout, cin, k, k))
        g = rng.normal(size=np_impl.conv2d_forward(x, wt, s, p).shape)
        label = f"({n},{cin},{h}x{w},{cout},{k},{s},{p}) red={cin * k * k}"
        cols = [label.ljust(44)]
        for impl in (np_impl, cy_impl):
            if impl is None:
                cols.append(f"{'unavailable':>22s}")
                continue
            fwd = _time(lambda: impl.conv2d_forward(x, wt, s, p))
            bwd = _time(lambda: impl.conv2d_backward(g, x, wt, s, p))
            cols.append(f"{fwd:8.3f} /{bwd:8.3f} ms")
        print(" ".join(cols))


def bench_dwconv(rng) -> None:
    x = rng.normal(size=(24, 64))
    w = rng.normal(size=(64, 5))
    g = rng.normal(size=(24, 64))
    line = "dwconv1d (24x64, k=5)".ljust(44)
    for impl in (np_impl, cy_impl):
        if impl is None:
            line += f" {'unavailable':>22s}"
            continue
        fwd = _time(lambda: impl.dwconv1d_forward(x, w), reps=200)
        bwd = _time(lambda: impl.dwconv1d_backward(g, x, w), reps=200)
        line += f" {fwd:8.3f} /{bwd:8.3f} ms"
    print(line)


def bench_ctc(rng) -> None:
    logits = rng.normal(size=(24, 6))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    labels = np.array([1, 2, 3, 4, 5, 1, 2, 3])
    line = "ctc loss+grad (T=24, K=6, N=8)".ljust(44)
    for impl in (np_impl, cy_impl):
        if impl is None:
            line += f" {'unavailable':>22s}"
            continue
        t = _time(lambda: impl.ctc_loss_grad(lp, labels), reps=200)
        line += f" {t:8.3f} ms          "
    print(line)


def main() -> None:
    print(f"active backend: {kernels.BACKEND}")
    if cy_impl is None:
        print("compiled core not built; showing NumPy fallback only")
    rng = np.random.default_rng(0)
    print("\nper-kernel timings (forward / backward):")
    bench_conv(rng)
    bench_dwconv(rng)
    bench_ctc(rng)


if __name__ == "__main__":
    main()
