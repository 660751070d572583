"""Hot-loop kernels with a compiled fast path.

The Cython extension ``widesense._ckernels`` is used when it imports; otherwise
the pure-Python versions in :mod:`widesense._pykernels` are used. Set
``WIDESENSE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

if os.environ.get("WIDESENSE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def crc64(data, crc=0):
    """CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init/xorout)."""
    if not isinstance(data, (bytes, bytearray)):
        data = memoryview(data).cast("B")
    return _impl.crc64(data, crc)
