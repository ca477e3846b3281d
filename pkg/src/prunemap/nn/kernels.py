"""Backend selection for the hot convolution/pooling kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is used.  Set ``PRUNEMAP_BACKEND=python`` to force the
fallback (handy for benchmarking and for checking the two agree).
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_ENV = os.environ.get("PRUNEMAP_BACKEND", "auto").lower()

if _ENV == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _ENV == "cython":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
        _impl = _pykernels
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward


def compiled_available() -> bool:
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True
