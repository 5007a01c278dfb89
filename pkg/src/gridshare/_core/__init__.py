"""Integration-kernel backend selection.

The compiled Cython kernels are used when the extension built; otherwise
the pure-numpy fallback takes over.  Set GRIDSHARE_FORCE_NUMPY=1 to force
the fallback (used by the backend-comparison benchmark and tests).
"""

import os

from . import _grid_np

if os.environ.get("GRIDSHARE_FORCE_NUMPY"):
    backend = _grid_np
    COMPILED = False
else:
    try:
        from . import _grid_cy as backend

        COMPILED = True
    except ImportError:
        backend = _grid_np
        COMPILED = False


def backend_name() -> str:
    return backend.BACKEND_NAME


__all__ = ["backend", "backend_name", "COMPILED", "_grid_np"]
