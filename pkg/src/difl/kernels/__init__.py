"""Backend selection for the convolution / pooling kernels.

Two interchangeable implementations ship with the package: a Cython
extension compiled at install time and a pure numpy fallback. By default the
compiled one is used when it imported cleanly. Set DIFL_KERNELS=numpy or
DIFL_KERNELS=cython to force a backend (forcing cython raises if the
extension is missing). Within one backend results are bit-reproducible;
across backends they agree to ~1e-12 because GEMM and explicit loops
accumulate in different orders.
"""

import os

from . import pykernels

_requested = os.environ.get("DIFL_KERNELS", "auto").strip().lower()

if _requested in ("auto", ""):
    try:
        from . import _cykernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = pykernels
        BACKEND = "numpy"
elif _requested == "cython":
    from . import _cykernels as _impl
    BACKEND = "cython"
elif _requested == "numpy":
    _impl = pykernels
    BACKEND = "numpy"
else:
    raise ImportError(
        f"DIFL_KERNELS must be 'numpy', 'cython' or 'auto', got {_requested!r}")

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
