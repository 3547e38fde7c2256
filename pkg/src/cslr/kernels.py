"""Kernel backend selection.

The compiled core (cslr._ckernels, built from Cython) is preferred when
it imported cleanly; otherwise the NumPy reference implementation is
used. Set ``CSLR_KERNELS=numpy`` or ``CSLR_KERNELS=cython`` to force a
backend (forcing cython raises if the extension is missing).

For conv2d the compiled backend routes by reduction size: direct loops
beat the BLAS path only when cin*kh*kw is small (e.g. the 2-channel 7x7
attention conv), so larger reductions fall through to the NumPy path
even when the extension is present. ``python -m cslr.bench`` prints the
per-shape comparison behind that threshold.
"""

from __future__ import annotations

import os

from cslr import _npkernels

# crossover measured by cslr.bench: direct loops win below ~128
CONV_LOOP_MAX_REDUCTION = 128

_forced = os.environ.get("CSLR_KERNELS", "").strip().lower()

_ck = None
if _forced != "numpy":
    try:
        from cslr import _ckernels as _ck  # type: ignore[no-redef]
    except ImportError:
        if _forced == "cython":
            raise
        _ck = None

BACKEND = "cython" if _ck is not None else "numpy"

if _ck is None:
    conv2d_forward = _npkernels.conv2d_forward
    conv2d_backward = _npkernels.conv2d_backward
    dwconv1d_forward = _npkernels.dwconv1d_forward
    dwconv1d_backward = _npkernels.dwconv1d_backward
    ctc_loss_grad = _npkernels.ctc_loss_grad
else:
    dwconv1d_forward = _ck.dwconv1d_forward
    dwconv1d_backward = _ck.dwconv1d_backward
    ctc_loss_grad = _ck.ctc_loss_grad

    def _reduction(w) -> int:
        return w.shape[1] * w.shape[2] * w.shape[3]

    def conv2d_forward(x, w, stride, pad):
        if _reduction(w) <= CONV_LOOP_MAX_REDUCTION:
            return _ck.conv2d_forward(x, w, stride, pad)
        return _npkernels.conv2d_forward(x, w, stride, pad)

    def conv2d_backward(g, x, w, stride, pad):
        if _reduction(w) <= CONV_LOOP_MAX_REDUCTION:
            return _ck.conv2d_backward(g, x, w, stride, pad)
        return _npkernels.conv2d_backward(g, x, w, stride, pad)
