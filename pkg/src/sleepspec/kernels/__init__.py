"""Hot numerical kernels with a compiled core and a pure-numpy fallback.

The Cython extension (:mod:`sleepspec.kernels._core`) is used when it was
built; otherwise the numpy implementation (:mod:`sleepspec.kernels._pure`)
takes over with identical semantics. Set ``SLEEPSPEC_KERNELS=pure`` or
``=compiled`` to force one backend wholesale (``compiled`` raises if
unavailable).

In the default (``auto``) mode the convolution and pooling kernels come from
the compiled core while ``tapered_spectra`` stays on the numpy path: the
direct transform is a complex matrix product, and BLAS beats scalar loops on
it by ~7x (see ``benchmarks/bench_kernels.py``).

Both backends expose:

- ``conv3x3_forward(x, w, b)``: stride-1, pad-1 convolution, NCHW.
- ``conv3x3_backward(x, w, dy)``: returns ``(dx, dw, db)``.
- ``maxpool2x2_forward(x)``: returns ``(y, argmax)`` with floor semantics.
- ``maxpool2x2_backward(dy, argmax, h, w)``.
- ``tapered_spectra(segments, tapers, freqs, fs)``: direct-evaluation
  multitaper power at arbitrary frequencies.
"""

from __future__ import annotations

import importlib
import logging
import os

from sleepspec.kernels import _pure

logger = logging.getLogger(__name__)

_requested = os.environ.get("SLEEPSPEC_KERNELS", "auto")
if _requested not in ("auto", "compiled", "pure"):
    raise ValueError(f"SLEEPSPEC_KERNELS must be auto|compiled|pure, got {_requested!r}")

_core = None
if _requested != "pure":
    try:
        _core = importlib.import_module("sleepspec.kernels._core")
    except ImportError:
        if _requested == "compiled":
            raise
        logger.info("compiled kernels unavailable, using the numpy fallback")

if _core is None:
    BACKEND = "pure"
    _conv_impl = _spectra_impl = _pure
elif _requested == "compiled":
    BACKEND = "compiled"
    _conv_impl = _spectra_impl = _core
else:
    BACKEND = "compiled"
    _conv_impl = _core
    _spectra_impl = _pure  # measured faster (BLAS complex matmul)

conv3x3_forward = _conv_impl.conv3x3_forward
conv3x3_backward = _conv_impl.conv3x3_backward
maxpool2x2_forward = _conv_impl.maxpool2x2_forward
maxpool2x2_backward = _conv_impl.maxpool2x2_backward
tapered_spectra = _spectra_impl.tapered_spectra

__all__ = [
    "BACKEND",
    "conv3x3_forward",
    "conv3x3_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "tapered_spectra",
]
