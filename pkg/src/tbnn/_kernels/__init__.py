"""Kernel backend selection.

Two implementations of the five hot kernels exist: ``numpy_impl`` (im2col
plus BLAS matmuls) and ``cython_impl`` (compiled direct loops). Benchmarks
(benchmarks/bench_kernels.py) show BLAS wins convolutions by a wide margin
while the compiled loops win max pooling, so the default is a hybrid:
numpy convolutions plus compiled pooling when the extension is available.

Set TBNN_KERNELS=numpy or TBNN_KERNELS=cython to force one pure backend
(forcing cython raises if the extension did not build). The two backends
agree to floating-point rounding; runs are bit-reproducible within any
fixed backend choice.
"""

import os

from . import numpy_impl


def cython_available() -> bool:
    try:
        from . import cython_impl  # noqa: F401
        return True
    except ImportError:
        return False


_forced = os.environ.get("TBNN_KERNELS", "").strip().lower()

if _forced == "numpy":
    _conv = _pool = numpy_impl
    BACKEND = "numpy"
elif _forced == "cython":
    from . import cython_impl

    _conv = _pool = cython_impl
    BACKEND = "cython"
elif _forced:
    raise ValueError(f"TBNN_KERNELS must be 'numpy' or 'cython', got {_forced!r}")
elif cython_available():
    from . import cython_impl

    _conv, _pool = numpy_impl, cython_impl
    BACKEND = "hybrid"
else:
    _conv = _pool = numpy_impl
    BACKEND = "numpy"

conv2d_forward = _conv.conv2d_forward
conv2d_backward_x = _conv.conv2d_backward_x
conv2d_backward_w = _conv.conv2d_backward_w
maxpool2_forward = _pool.maxpool2_forward
maxpool2_backward = _pool.maxpool2_backward
