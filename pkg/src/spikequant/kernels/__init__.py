"""Convolution kernel backend selection.

The compiled Cython core is preferred when it importable; the pure-numpy
im2col implementation is the fallback.  ``SPIKEQUANT_KERNELS`` overrides the
choice: ``compiled`` (fail if unavailable), ``numpy``, or ``auto`` (default).
Both backends share one contract; ``benchmarks/bench_kernels.py`` compares
them on representative shapes.
"""

import os

import numpy as np

from . import numpy_backend

_choice = os.environ.get("SPIKEQUANT_KERNELS", "auto").lower()
if _choice not in ("auto", "compiled", "numpy"):
    raise ValueError(
        f"SPIKEQUANT_KERNELS must be auto, compiled, or numpy, got {_choice!r}")

compiled_backend = None
if _choice in ("auto", "compiled"):
    try:
        from . import _convkernels as compiled_backend
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "SPIKEQUANT_KERNELS=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation`")

BACKEND = "compiled" if compiled_backend is not None else "numpy"
_impl = compiled_backend if compiled_backend is not None else numpy_backend


def _c64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, stride, padding):
    return np.asarray(_impl.conv2d_forward(_c64(x), _c64(w), stride, padding))


def conv2d_backward_input(g, w, stride, padding, H, W):
    return np.asarray(_impl.conv2d_backward_input(_c64(g), _c64(w), stride, padding, H, W))


def conv2d_backward_kernel(g, x, stride, padding, k):
    return np.asarray(_impl.conv2d_backward_kernel(_c64(g), _c64(x), stride, padding, k))
