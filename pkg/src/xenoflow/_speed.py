"""Selects the batch-kernel backend at import time.

The compiled extension (``xenoflow._fastpath``) is preferred; the pure
numpy/Python implementation is the fallback.  Set XENOFLOW_PURE=1 to force
the fallback, e.g. for the backend benchmark.
"""

import os

from . import _purepath

if os.environ.get("XENOFLOW_PURE"):
    impl = _purepath
else:
    try:
        from . import _fastpath as impl  # type: ignore[no-redef]
    except ImportError:
        impl = _purepath


def active_backend() -> str:
    return impl.BACKEND_NAME
